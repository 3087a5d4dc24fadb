//! Modified Bessel functions of the second kind for integer order, and the
//! Matérn covariance built on them.

use super::precision::MaternParams;
use crate::error::{Error, Result};

const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

/// `(K₀(x), K₁(x))` for `x > 0`.
///
/// Power series for `x ≤ 2`; Steed's continued fraction (Temme's CF2) above.
pub fn bessel_k01(x: f64) -> (f64, f64) {
    debug_assert!(x > 0.0);
    if x <= 2.0 {
        series_k01(x)
    } else {
        steed_k01(x)
    }
}

fn series_k01(x: f64) -> (f64, f64) {
    let y = 0.25 * x * x;
    let log_half = (0.5 * x).ln();
    // term_k = y^k / (k!)^2 ; psi(k+1) = -γ + H_k.
    let mut term0 = 1.0;
    let mut i0 = 0.0;
    let mut k0_sum = 0.0;
    // term1_k = y^k / (k! (k+1)!)
    let mut term1 = 1.0;
    let mut i1 = 0.0;
    let mut k1_sum = 0.0;
    let mut harmonic = 0.0;
    for k in 0..60 {
        let kf = k as f64;
        if k > 0 {
            term0 *= y / (kf * kf);
            term1 *= y / (kf * (kf + 1.0));
            harmonic += 1.0 / kf;
        }
        let psi1 = -EULER_GAMMA + harmonic;
        let psi2 = psi1 + 1.0 / (kf + 1.0);
        i0 += term0;
        k0_sum += term0 * psi1;
        i1 += term1;
        k1_sum += term1 * (psi1 + psi2);
        if term0 < 1e-18 * i0 && term1 < 1e-18 * i1 {
            break;
        }
    }
    let i1 = 0.5 * x * i1;
    let k0 = -log_half * i0 + k0_sum;
    let k1 = 1.0 / x + log_half * i1 - 0.25 * x * k1_sum;
    (k0, k1)
}

fn steed_k01(x: f64) -> (f64, f64) {
    let a1 = 0.25;
    let mut b = 2.0 * (1.0 + x);
    let mut d = 1.0 / b;
    let mut delh = d;
    let mut h = d;
    let mut q1 = 0.0;
    let mut q2 = 1.0;
    let mut q = a1;
    let mut c = a1;
    let mut a = -a1;
    let mut s = 1.0 + q * delh;
    for i in 2..10_000 {
        let fi = i as f64;
        a -= 2.0 * (fi - 1.0);
        c = -a * c / fi;
        let qnew = (q1 - b * q2) / a;
        q1 = q2;
        q2 = qnew;
        q += c * qnew;
        b += 2.0;
        d = 1.0 / (b + a * d);
        delh *= b * d - 1.0;
        h += delh;
        let dels = q * delh;
        s += dels;
        if (dels / s).abs() < 1e-17 {
            break;
        }
    }
    h *= a1;
    let k0 = (std::f64::consts::PI / (2.0 * x)).sqrt() * (-x).exp() / s;
    let k1 = k0 * (x + 0.5 - h) / x;
    (k0, k1)
}

/// `K_ν(x)` for integer `ν ≥ 0` and `x > 0`, by upward recurrence from `K₀, K₁`.
pub fn bessel_k(nu: u32, x: f64) -> Result<f64> {
    if !(x > 0.0) || !x.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "bessel_k needs x > 0, got {x}"
        )));
    }
    let (k0, k1) = bessel_k01(x);
    if nu == 0 {
        return Ok(k0);
    }
    let (mut prev, mut cur) = (k0, k1);
    for n in 1..nu {
        let next = prev + 2.0 * n as f64 / x * cur;
        prev = cur;
        cur = next;
    }
    Ok(cur)
}

/// `σ² / (Γ(ν) 2^{ν−1}) (κh)^ν K_ν(κh)`, with the continuous limit `σ²` at `h = 0`.
pub fn matern_covariance(params: &MaternParams, h: f64) -> f64 {
    params.sigma2 * matern_correlation(params.nu, params.kappa, h)
}

pub fn matern_correlation(nu: u32, kappa: f64, h: f64) -> f64 {
    assert!(h >= 0.0, "distance must be non-negative");
    let u = kappa * h;
    if u == 0.0 {
        return 1.0;
    }
    if u > 700.0 {
        return 0.0;
    }
    let gamma_nu: f64 = (1..nu).map(f64::from).product();
    let norm = gamma_nu * 2f64.powi(nu as i32 - 1);
    u.powi(nu as i32) * bessel_k(nu, u).expect("u > 0") / norm
}
