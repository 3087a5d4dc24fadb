//! Gaussian approximation at the joint mode: sampled logit marginals, the
//! Laplace log evidence and the fixed-θ fit.

use std::sync::Arc;

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::model::{sigmoid, Hyperparams, LatentState, Model, PriorSpec, Structure, LN_2PI};
use super::newton::{newton, NewtonOptions, NewtonOutcome};
use super::quadrature::{posterior_p_means_with, GaussHermite, PosteriorP, DEFAULT_GH_ORDER};
use crate::error::{Error, Result};
use crate::gmrf::{Calibration, CholFactor};
use crate::rng::{stream_rng, Stream};

pub const DEFAULT_LAPLACE_SAMPLES: usize = 200;

/// How the logit means are read off the Gaussian approximation.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MeanCorrection {
    /// The mode itself.
    None,
    /// Mode plus the second-order skewness shift `−½ H⁻¹ t`, where `t`
    /// carries the likelihood third derivatives times the marginal
    /// variances. Keeps `Σ E(p_i|o)` consistent with `Σ o_i`.
    #[default]
    Skew,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitOptions {
    pub newton: NewtonOptions,
    /// Draws used to estimate the logit marginal variances.
    pub laplace_samples: usize,
    pub gh_order: usize,
    pub seed: u64,
    pub calibration: Calibration,
    pub mean_correction: MeanCorrection,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            newton: NewtonOptions::default(),
            laplace_samples: DEFAULT_LAPLACE_SAMPLES,
            gh_order: DEFAULT_GH_ORDER,
            seed: 0,
            calibration: Calibration::Lattice,
            mean_correction: MeanCorrection::Skew,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitDiagnostics {
    pub newton_iters: usize,
    pub grad_norm: f64,
    /// All observations equal; the mode is held finite only by the priors.
    pub boundary_degenerate: bool,
    /// Log-marginal evaluations spent selecting θ (0 for a fixed θ).
    pub evaluations: usize,
    /// θ points averaged into the posterior (0 without grid averaging).
    pub grid_points: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LaplaceFit {
    pub theta_hat: Hyperparams,
    pub mode: LatentState,
    pub eta_mean: Vec<f64>,
    pub eta_var: Vec<f64>,
    pub log_marginal: f64,
    pub posterior: PosteriorP,
    pub diagnostics: FitDiagnostics,
}

impl LaplaceFit {
    /// `Σ_i E(p_i|o)`.
    pub fn expected_sparsity(&self) -> f64 {
        crate::estimator::estimate_expected_sparsity(&self.posterior).value
    }
}

/// Per-coordinate sample variances of `k` exact draws from `N(0, H⁻¹)`
/// restricted to `coords`.
pub fn sampled_variances(
    factor: &CholFactor,
    coords: std::ops::Range<usize>,
    k: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    if k < 2 {
        return Err(Error::InvalidArgument(format!(
            "need at least 2 Laplace samples, got {k}"
        )));
    }
    if coords.end > factor.n() {
        return Err(Error::DimensionMismatch {
            expected: factor.n(),
            got: coords.end,
        });
    }
    let mut rng = stream_rng(seed, Stream::Laplace);
    let len = coords.len();
    let mut mean = vec![0.0; len];
    let mut m2 = vec![0.0; len];
    let mut z = vec![0.0; factor.n()];
    for s in 0..k {
        z.iter_mut()
            .for_each(|v| *v = StandardNormal.sample(&mut rng));
        let x = factor.colour_standard_normal(&z);
        let cnt = (s + 1) as f64;
        for (j, &xv) in x[coords.clone()].iter().enumerate() {
            let d = xv - mean[j];
            mean[j] += d / cnt;
            m2[j] += d * (xv - mean[j]);
        }
    }
    Ok(m2.into_iter().map(|v| v / (k - 1) as f64).collect())
}

/// Logit marginals at the mode: means are the mode's η block, variances
/// come from `k` seeded draws through the Hessian factor.
pub fn laplace_marginals(
    outcome: &NewtonOutcome,
    k: usize,
    seed: u64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = outcome.x.len() / 2;
    let var = sampled_variances(&outcome.factor, 0..n, k, seed)?;
    Ok((outcome.x[..n].to_vec(), var))
}

/// Shifted logit means `η̂ + δ_η` with `H δ = −½ t`,
/// `t_i = σ_i(1 − σ_i)(1 − 2σ_i) v_i` on the η block.
pub fn skew_corrected_means(outcome: &NewtonOutcome, eta_var: &[f64]) -> Result<Vec<f64>> {
    let n = outcome.x.len() / 2;
    if eta_var.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: eta_var.len(),
        });
    }
    let mut t = vec![0.0; outcome.x.len()];
    for i in 0..n {
        let p = sigmoid(outcome.x[i]);
        t[i] = -0.5 * p * (1.0 - p) * (1.0 - 2.0 * p) * eta_var[i];
    }
    let delta = outcome.factor.solve(&t)?;
    Ok((0..n).map(|i| outcome.x[i] + delta[i]).collect())
}

/// `log p(o | θ)` by the Laplace approximation at `outcome`'s mode.
pub fn laplace_log_evidence(outcome: &NewtonOutcome) -> f64 {
    let d = outcome.x.len() as f64;
    -outcome.value + 0.5 * d * LN_2PI - 0.5 * outcome.factor.log_det()
}

/// Reusable per-lattice state for repeated fits on one image size.
#[derive(Debug, Clone)]
pub struct LatticeProblem {
    pub o: Vec<u8>,
    pub n1: usize,
    pub n2: usize,
    pub priors: PriorSpec,
    structure: Arc<Structure>,
}

impl LatticeProblem {
    pub fn new(o: &[u8], n1: usize, n2: usize, priors: PriorSpec) -> Result<Self> {
        priors.validate()?;
        if o.len() != n1 * n2 {
            return Err(Error::DimensionMismatch {
                expected: n1 * n2,
                got: o.len(),
            });
        }
        Ok(Self {
            o: o.to_vec(),
            n1,
            n2,
            priors,
            structure: Structure::lattice(n1, n2)?,
        })
    }

    pub fn n(&self) -> usize {
        self.o.len()
    }

    pub fn model(&self, theta: &Hyperparams, calibration: Calibration) -> Result<Model> {
        Model::lattice(
            &self.o,
            self.n1,
            self.n2,
            theta,
            &self.priors,
            calibration,
            self.structure.clone(),
        )
    }

    /// Mode at θ, warm-started from `init` when given.
    pub fn mode(
        &self,
        theta: &Hyperparams,
        init: Option<&[f64]>,
        opts: &FitOptions,
    ) -> Result<(Model, NewtonOutcome)> {
        let model = self.model(theta, opts.calibration)?;
        let start = match init {
            Some(x) => x.to_vec(),
            None => model.default_init(),
        };
        let out = newton(&model, &start, &opts.newton)?;
        Ok((model, out))
    }

    /// Laplace log evidence plus log prior at θ; also returns the mode.
    pub fn log_marginal(
        &self,
        theta: &Hyperparams,
        init: Option<&[f64]>,
        opts: &FitOptions,
    ) -> Result<(f64, NewtonOutcome)> {
        let (_, out) = self.mode(theta, init, opts)?;
        let lm = laplace_log_evidence(&out) + self.priors.ln_density(theta);
        Ok((lm, out))
    }

    /// Complete fit at a fixed θ.
    pub fn fit(
        &self,
        theta: &Hyperparams,
        init: Option<&[f64]>,
        opts: &FitOptions,
    ) -> Result<LaplaceFit> {
        let (model, out) = self.mode(theta, init, opts)?;
        finish_fit(&model, out, *theta, &self.priors, opts, 0)
    }
}

pub(crate) fn finish_fit(
    model: &Model,
    out: NewtonOutcome,
    theta: Hyperparams,
    priors: &PriorSpec,
    opts: &FitOptions,
    evaluations: usize,
) -> Result<LaplaceFit> {
    let log_marginal = laplace_log_evidence(&out) + priors.ln_density(&theta);
    let (mode_eta, eta_var) = laplace_marginals(&out, opts.laplace_samples, opts.seed)?;
    let eta_mean = match opts.mean_correction {
        MeanCorrection::None => mode_eta,
        MeanCorrection::Skew => skew_corrected_means(&out, &eta_var)?,
    };
    let rule = GaussHermite::new(opts.gh_order)?;
    let posterior = posterior_p_means_with(&eta_mean, &eta_var, &rule)?;
    Ok(LaplaceFit {
        theta_hat: theta,
        mode: out.mode(),
        eta_mean,
        eta_var,
        log_marginal,
        posterior,
        diagnostics: FitDiagnostics {
            newton_iters: out.iterations,
            grad_norm: out.grad_norm,
            boundary_degenerate: model.is_degenerate(),
            evaluations,
            grid_points: 0,
        },
    })
}

/// `log p(o|θ) + log π(θ)` on an `n1 × n2` lattice.
pub fn log_marginal(
    o: &[u8],
    n1: usize,
    n2: usize,
    theta: &Hyperparams,
    priors: &PriorSpec,
    opts: &FitOptions,
) -> Result<f64> {
    Ok(LatticeProblem::new(o, n1, n2, *priors)?
        .log_marginal(theta, None, opts)?
        .0)
}

/// Fit at a known θ.
pub fn fit_fixed(
    o: &[u8],
    n1: usize,
    n2: usize,
    theta: &Hyperparams,
    priors: &PriorSpec,
    opts: &FitOptions,
) -> Result<LaplaceFit> {
    LatticeProblem::new(o, n1, n2, *priors)?.fit(theta, None, opts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gmrf::SparseSymMatrix;
    use crate::rng::seeded;
    use rand::RngExt;

    fn simulated(n: usize, seed: u64) -> Vec<u8> {
        let mut rng = seeded(seed);
        (0..n * n)
            .map(|k| {
                let (r, c) = ((k / n) as f64, (k % n) as f64);
                let p = 0.15 + 0.7 * (((r + c) / (2.0 * n as f64)) * 3.0).sin().abs();
                u8::from(rng.random::<f64>() < p)
            })
            .collect()
    }

    #[test]
    fn diagonal_hessian_variances() {
        let h = SparseSymMatrix::diagonal(&[4.0; 30]).unwrap();
        let f = crate::gmrf::chol_factor(&h, &Default::default()).unwrap();
        let k = 400;
        let v = sampled_variances(&f, 0..30, k, 3).unwrap();
        let tol = 3.0 * 0.25 * (2.0 / k as f64).sqrt();
        for x in v {
            assert!((x - 0.25).abs() < tol, "{x}");
        }
        assert!(sampled_variances(&f, 0..30, 1, 3).is_err());
        assert!(sampled_variances(&f, 0..31, 10, 3).is_err());
    }

    #[test]
    fn sampled_variances_match_dense_inverse() {
        let o = simulated(8, 1);
        let theta = Hyperparams::new(0.6, 1.0, 8.0).unwrap();
        let prob = LatticeProblem::new(&o, 8, 8, PriorSpec::default()).unwrap();
        let (model, out) = prob.mode(&theta, None, &FitOptions::default()).unwrap();
        let (_, var) = laplace_marginals(&out, 4000, 9).unwrap();
        // Dense Gauss-Jordan inverse of the Hessian.
        let mut a = model.hessian(&out.x).unwrap().to_dense();
        let d = a.len();
        let mut inv: Vec<Vec<f64>> = (0..d)
            .map(|i| (0..d).map(|j| f64::from(u8::from(i == j))).collect())
            .collect();
        for c in 0..d {
            let p = (c..d)
                .max_by(|&x, &y| a[x][c].abs().total_cmp(&a[y][c].abs()))
                .unwrap();
            a.swap(c, p);
            inv.swap(c, p);
            let piv = a[c][c];
            for j in 0..d {
                a[c][j] /= piv;
                inv[c][j] /= piv;
            }
            for r in 0..d {
                if r != c && a[r][c] != 0.0 {
                    let f = a[r][c];
                    for j in 0..d {
                        a[r][j] -= f * a[c][j];
                        inv[r][j] -= f * inv[c][j];
                    }
                }
            }
        }
        for i in 0..64 {
            let rel = (var[i] - inv[i][i]).abs() / inv[i][i];
            assert!(rel < 0.15, "pixel {i}: {} vs {}", var[i], inv[i][i]);
        }
    }

    #[test]
    fn fixed_seed_is_reproducible() {
        let o = simulated(8, 2);
        let theta = Hyperparams::new(0.6, 1.0, 8.0).unwrap();
        let opts = FitOptions {
            seed: 42,
            ..FitOptions::default()
        };
        let a = fit_fixed(&o, 8, 8, &theta, &PriorSpec::default(), &opts).unwrap();
        let b = fit_fixed(&o, 8, 8, &theta, &PriorSpec::default(), &opts).unwrap();
        assert_eq!(a.eta_var, b.eta_var);
        assert!(a.eta_var.iter().all(|&v| v > 0.0));
        assert!(a.diagnostics.grad_norm <= 1e-8);
        let s = a.expected_sparsity();
        assert!(s > 0.0 && s < 64.0);
    }

    #[test]
    fn single_pixel_evidence_matches_quadrature() {
        // η ~ N(0, 1/τ + 1/q + 1/p_μ); p(o=1) integrates σ(η) against it.
        let q = SparseSymMatrix::diagonal(&[20.0]).unwrap();
        let s = Structure::new(&q, None).unwrap();
        let model = Model::new(&[1], q, 20.0, 20.0, s).unwrap();
        let out = newton(&model, &model.default_init(), &NewtonOptions::default()).unwrap();
        let lm = laplace_log_evidence(&out);
        let v: f64 = 3.0 / 20.0;
        let h = 1e-4;
        let mut acc = 0.0;
        let mut e = -12.0;
        while e <= 12.0 {
            let dens = (-e * e / (2.0 * v)).exp() / (2.0 * std::f64::consts::PI * v).sqrt();
            acc += sigmoid(e) * dens * h;
            e += h;
        }
        assert!((lm - acc.ln()).abs() < 1e-3, "{lm} vs {}", acc.ln());
    }

    #[test]
    fn absurd_kappa_has_lower_marginal() {
        let prob_theta = Hyperparams::new(0.4, 1.5, 20.0).unwrap();
        let n = 16;
        // Simulate a latent field at the moderate θ and threshold it.
        let q = crate::gmrf::build_precision(&prob_theta.matern(), n, n).unwrap();
        let f = crate::gmrf::chol_factor(&q, &Default::default()).unwrap();
        let m = crate::gmrf::sample_field(&f, 5);
        let mut rng = seeded(6);
        let o: Vec<u8> = m
            .iter()
            .map(|&v| u8::from(rng.random::<f64>() < sigmoid(v)))
            .collect();
        let opts = FitOptions::default();
        let pri = PriorSpec::default();
        let good = log_marginal(&o, n, n, &prob_theta, &pri, &opts).unwrap();
        let bad = log_marginal(
            &o,
            n,
            n,
            &Hyperparams::new(40.0, 1.5, 20.0).unwrap(),
            &pri,
            &opts,
        )
        .unwrap();
        assert!(good.is_finite() && bad.is_finite());
        assert!(good > bad, "{good} <= {bad}");
    }
}
