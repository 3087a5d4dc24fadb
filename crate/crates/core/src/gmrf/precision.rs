//! Matérn-SPDE precision on a regular unit lattice (smoothness 1).
//!
//! The unscaled operator is the 13-point stencil of `(κ² − Δ)²` with the
//! 5-point Laplacian: centre `a² + 4`, axial distance 1 `−2a`, diagonal `+2`,
//! axial distance 2 `+1`, where `a = κ² + 4`. Stencil entries that fall
//! outside the lattice are dropped.

use serde::{Deserialize, Serialize};

use super::bessel::matern_correlation;
use super::sparse::SparseSymMatrix;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaternParams {
    pub nu: u32,
    pub kappa: f64,
    pub sigma2: f64,
}

impl MaternParams {
    pub fn new(nu: u32, kappa: f64, sigma2: f64) -> Result<Self> {
        let p = Self { nu, kappa, sigma2 };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if self.nu == 0 {
            return Err(Error::InvalidArgument(
                "Matérn smoothness must be a positive integer".into(),
            ));
        }
        if !(self.kappa > 0.0 && self.kappa.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "kappa must be > 0, got {}",
                self.kappa
            )));
        }
        if !(self.sigma2 > 0.0 && self.sigma2.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "sigma2 must be > 0, got {}",
                self.sigma2
            )));
        }
        Ok(())
    }

    /// Distance at which the correlation has dropped to roughly 0.1: `√(8ν)/κ`.
    pub fn range(&self) -> f64 {
        (8.0 * self.nu as f64).sqrt() / self.kappa
    }

    pub fn kappa_for_range(nu: u32, range: f64) -> f64 {
        (8.0 * nu as f64).sqrt() / range
    }
}

/// How the stencil parameters are tied to the Matérn `(κ, σ²)`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Calibration {
    /// Stencil `κ` moved so the lattice correlation equals the Matérn
    /// correlation at axial lag `max(0.4 · range, 1)`, then `τ²` set from
    /// the exact lattice variance.
    #[default]
    Lattice,
    /// Nominal `κ`, `τ²` from the exact lattice variance.
    Variance,
    /// Nominal `κ` and the continuum formula `σ² = 1 / (4π κ² τ²)`.
    Continuum,
}

/// Marginal variance of the unscaled stencil field on the infinite lattice:
/// `(1/4π²) ∬ dω / (κ² + 4 sin²(ω₁/2) + 4 sin²(ω₂/2))²` over `[−π, π]²`.
///
/// The inner integral has the closed form `2π c / (c² − 4)^{3/2}` with
/// `c = κ² + 4 − 2 cos ω₁`, leaving a 1D integral that is evaluated with
/// Simpson's rule after the substitution `ω = κ sinh t`.
pub fn lattice_unit_variance(kappa: f64) -> f64 {
    lattice_axial_covariance(kappa, 0.0)
}

/// Covariance of the unscaled stencil field at axial lag `d`: the same
/// integral with `cos(d ω₁)` in the integrand. Smooth in `d`, so
/// fractional lags interpolate the lattice values.
pub fn lattice_axial_covariance(kappa: f64, d: f64) -> f64 {
    let k2 = kappa * kappa;
    let f = |w: f64| {
        let c = k2 + 4.0 - 2.0 * w.cos();
        (d * w).cos() * c / ((c - 2.0) * (c + 2.0)).powf(1.5)
    };
    let t_max = (std::f64::consts::PI / kappa).asinh();
    let steps = 4000;
    let h = t_max / steps as f64;
    let g = |t: f64| f(kappa * t.sinh()) * kappa * t.cosh();
    let mut acc = g(0.0) + g(t_max);
    for i in 1..steps {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        acc += w * g(i as f64 * h);
    }
    acc * h / 3.0 / std::f64::consts::PI
}

/// Lag at which [`Calibration::Lattice`] matches correlations.
pub fn calibration_lag(kappa: f64) -> f64 {
    (0.4 * 8f64.sqrt() / kappa).max(1.0)
}

/// Stencil `κ` whose lattice correlation at [`calibration_lag`] equals the
/// Matérn (ν = 1) correlation of `kappa` there.
pub fn lattice_kappa(kappa: f64) -> f64 {
    let d = calibration_lag(kappa);
    let target = matern_correlation(1, kappa, d);
    // Lattice correlation at a fixed lag falls as the stencil κ grows.
    let gap = |k: f64| lattice_axial_covariance(k, d) / lattice_unit_variance(k) - target;
    let (mut lo, mut hi) = (0.5 * kappa, 2.0 * kappa);
    while gap(lo) < 0.0 {
        lo *= 0.5;
    }
    while gap(hi) > 0.0 {
        hi *= 2.0;
    }
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if gap(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-13 * hi {
            break;
        }
    }
    0.5 * (lo + hi)
}

/// Stencil `κ` and scale `τ²` representing `params` on the lattice.
pub fn stencil_parameters(params: &MaternParams, calibration: Calibration) -> (f64, f64) {
    match calibration {
        Calibration::Lattice => {
            let k = lattice_kappa(params.kappa);
            (k, lattice_unit_variance(k) / params.sigma2)
        }
        Calibration::Variance => (
            params.kappa,
            lattice_unit_variance(params.kappa) / params.sigma2,
        ),
        Calibration::Continuum => (
            params.kappa,
            1.0 / (4.0 * std::f64::consts::PI * params.kappa * params.kappa * params.sigma2),
        ),
    }
}

/// Unscaled stencil coefficients `(centre, axial1, diagonal, axial2)`.
pub fn stencil(kappa: f64) -> (f64, f64, f64, f64) {
    let a = kappa * kappa + 4.0;
    (a * a + 4.0, -2.0 * a, 2.0, 1.0)
}

/// Unscaled `K₂` on an `n1 x n2` lattice; both sides must be at least 5.
pub fn unscaled_precision(kappa: f64, n1: usize, n2: usize) -> SparseSymMatrix {
    assert!(n1 >= 5 && n2 >= 5, "stencil lattice must be at least 5x5");
    let (centre, ax1, diag, ax2) = stencil(kappa);
    const OFFSETS: [(isize, isize, u8); 13] = [
        (-2, 0, 3),
        (-1, -1, 2),
        (-1, 0, 1),
        (-1, 1, 2),
        (0, -2, 3),
        (0, -1, 1),
        (0, 0, 0),
        (0, 1, 1),
        (0, 2, 3),
        (1, -1, 2),
        (1, 0, 1),
        (1, 1, 2),
        (2, 0, 3),
    ];
    let n = n1 * n2;
    let mut row_ptr = Vec::with_capacity(n + 1);
    let mut col_idx = Vec::with_capacity(13 * n);
    let mut values = Vec::with_capacity(13 * n);
    row_ptr.push(0);
    for r in 0..n1 as isize {
        for c in 0..n2 as isize {
            // OFFSETS is sorted by (row, col), hence by linear index.
            for &(dr, dc, kind) in &OFFSETS {
                let (rr, cc) = (r + dr, c + dc);
                if rr < 0 || cc < 0 || rr >= n1 as isize || cc >= n2 as isize {
                    continue;
                }
                col_idx.push(rr as usize * n2 + cc as usize);
                values.push(match kind {
                    0 => centre,
                    1 => ax1,
                    2 => diag,
                    _ => ax2,
                });
            }
            row_ptr.push(col_idx.len());
        }
    }
    SparseSymMatrix::from_csr_unchecked(n, row_ptr, col_idx, values)
}

pub fn build_precision(params: &MaternParams, n1: usize, n2: usize) -> Result<SparseSymMatrix> {
    build_precision_with(params, n1, n2, Calibration::default())
}

pub fn build_precision_with(
    params: &MaternParams,
    n1: usize,
    n2: usize,
    calibration: Calibration,
) -> Result<SparseSymMatrix> {
    params.validate()?;
    if params.nu != 1 {
        return Err(Error::InvalidArgument(format!(
            "only smoothness nu = 1 is supported, got {}",
            params.nu
        )));
    }
    if n1 < 5 || n2 < 5 {
        return Err(Error::InvalidArgument(format!(
            "lattice must be at least 5x5, got {n1}x{n2}"
        )));
    }
    let (kappa, tau2) = stencil_parameters(params, calibration);
    Ok(unscaled_precision(kappa, n1, n2).scaled(tau2))
}
