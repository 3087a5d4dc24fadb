//! Empirical-Bayes selection of θ by Nelder–Mead on the Laplace log marginal.

use serde::{Deserialize, Serialize};

use super::laplace::{finish_fit, FitOptions, LaplaceFit, LatticeProblem};
use super::model::{Hyperparams, PriorSpec};
use super::newton::NewtonOutcome;
use super::quadrature::PosteriorP;
use crate::error::{Error, Result};

/// Closed bounds on θ in natural units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SearchBox {
    pub kappa: (f64, f64),
    pub sigma2_m: (f64, f64),
    pub tau_iid: (f64, f64),
}

impl SearchBox {
    /// Practical range between one pixel and the longer image side.
    pub fn for_lattice(n1: usize, n2: usize) -> Self {
        let s8 = 8f64.sqrt();
        Self {
            kappa: (s8 / n1.max(n2) as f64, s8),
            sigma2_m: (1e-2, 1e2),
            tau_iid: (1e-1, 1e4),
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, (lo, hi)) in [
            ("kappa", self.kappa),
            ("sigma2_m", self.sigma2_m),
            ("tau_iid", self.tau_iid),
        ] {
            if !(lo > 0.0 && hi >= lo && hi.is_finite()) {
                return Err(Error::InvalidArgument(format!(
                    "search box for {name} must satisfy 0 < lo <= hi, got ({lo}, {hi})"
                )));
            }
        }
        Ok(())
    }

    fn log_bounds(&self) -> [(f64, f64); 3] {
        [self.kappa, self.sigma2_m, self.tau_iid].map(|(lo, hi)| (lo.ln(), hi.ln()))
    }

    fn clamp_log(&self, x: [f64; 3]) -> [f64; 3] {
        let b = self.log_bounds();
        [0, 1, 2].map(|k| x[k].clamp(b[k].0, b[k].1))
    }

    /// θ at log coordinates `x`, projected onto the box.
    pub fn theta_at(&self, x: [f64; 3]) -> Hyperparams {
        let t = Hyperparams::from_log(x);
        Hyperparams {
            kappa: t.kappa.clamp(self.kappa.0, self.kappa.1),
            sigma2_m: t.sigma2_m.clamp(self.sigma2_m.0, self.sigma2_m.1),
            tau_iid: t.tau_iid.clamp(self.tau_iid.0, self.tau_iid.1),
        }
    }

    pub fn contains(&self, t: &Hyperparams) -> bool {
        let inside = |v: f64, (lo, hi): (f64, f64)| v >= lo && v <= hi;
        inside(t.kappa, self.kappa)
            && inside(t.sigma2_m, self.sigma2_m)
            && inside(t.tau_iid, self.tau_iid)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EbOptions {
    pub fit: FitOptions,
    pub start: Option<Hyperparams>,
    pub search_box: Option<SearchBox>,
    pub max_evals: usize,
    /// Stop when the simplex objective spread falls to this.
    pub ftol: f64,
    /// Average over a `k³` grid around θ̂ when set.
    pub theta_grid: Option<usize>,
    /// Grid spacing in log units.
    pub grid_step: f64,
}

impl Default for EbOptions {
    fn default() -> Self {
        Self {
            fit: FitOptions::default(),
            start: None,
            search_box: None,
            max_evals: 100,
            ftol: 1e-3,
            theta_grid: None,
            grid_step: 0.5,
        }
    }
}

/// Range a quarter of the first side, unit variance, τ = 10.
pub fn default_start(n1: usize) -> Hyperparams {
    Hyperparams {
        kappa: 8f64.sqrt() / (n1 as f64 / 4.0),
        sigma2_m: 1.0,
        tau_iid: 10.0,
    }
}

/// Result of minimising a function with [`nelder_mead`].
#[derive(Debug, Clone, PartialEq)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub f: f64,
    pub evaluations: usize,
}

/// Nelder–Mead with standard coefficients. `f` may return `+∞` for
/// infeasible points. Stops when `max f − min f ≤ ftol` over the simplex or
/// after `max_evals` evaluations.
pub fn nelder_mead(
    mut f: impl FnMut(&[f64]) -> f64,
    x0: &[f64],
    steps: &[f64],
    max_evals: usize,
    ftol: f64,
) -> Minimum {
    let d = x0.len();
    let mut evals = 0;
    let mut eval = |x: &[f64], evals: &mut usize| {
        *evals += 1;
        let v = f(x);
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    };
    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(d + 1);
    let f0 = eval(x0, &mut evals);
    simplex.push((x0.to_vec(), f0));
    for k in 0..d {
        if evals >= max_evals {
            break;
        }
        let mut x = x0.to_vec();
        x[k] += steps[k];
        let v = eval(&x, &mut evals);
        simplex.push((x, v));
    }
    let best = |s: &[(Vec<f64>, f64)]| {
        s.iter()
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .cloned()
            .expect("non-empty simplex")
    };
    if simplex.len() < d + 1 {
        let (x, f) = best(&simplex);
        return Minimum {
            x,
            f,
            evaluations: evals,
        };
    }
    let point = |c: &[f64], w: &[f64], t: f64| -> Vec<f64> {
        c.iter().zip(w).map(|(a, b)| a + t * (b - a)).collect()
    };
    while evals < max_evals {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let spread = simplex[d].1 - simplex[0].1;
        if simplex[0].1.is_finite() && spread <= ftol {
            break;
        }
        let mut centroid = vec![0.0; d];
        for (x, _) in &simplex[..d] {
            for (c, v) in centroid.iter_mut().zip(x) {
                *c += v / d as f64;
            }
        }
        let worst = simplex[d].0.clone();
        let xr = point(&centroid, &worst, -1.0);
        let fr = eval(&xr, &mut evals);
        if fr < simplex[0].1 {
            if evals >= max_evals {
                simplex[d] = (xr, fr);
                break;
            }
            let xe = point(&centroid, &worst, -2.0);
            let fe = eval(&xe, &mut evals);
            simplex[d] = if fe < fr { (xe, fe) } else { (xr, fr) };
            continue;
        }
        if fr < simplex[d - 1].1 {
            simplex[d] = (xr, fr);
            continue;
        }
        if evals >= max_evals {
            break;
        }
        let xc = if fr < simplex[d].1 {
            point(&centroid, &xr, 0.5)
        } else {
            point(&centroid, &worst, 0.5)
        };
        let fc = eval(&xc, &mut evals);
        if fc < simplex[d].1.min(fr) {
            simplex[d] = (xc, fc);
            continue;
        }
        // Shrink towards the best vertex.
        let b = simplex[0].0.clone();
        for k in 1..=d {
            if evals >= max_evals {
                break;
            }
            let xs = point(&b, &simplex[k].0, 0.5);
            let fs = eval(&xs, &mut evals);
            simplex[k] = (xs, fs);
        }
    }
    let (x, f) = best(&simplex);
    Minimum {
        x,
        f,
        evaluations: evals,
    }
}

/// θ̂ = argmax of the Laplace log marginal, then the full fit at θ̂.
pub fn fit_empirical_bayes(
    o: &[u8],
    n1: usize,
    n2: usize,
    priors: &PriorSpec,
    opts: &EbOptions,
) -> Result<LaplaceFit> {
    let problem = LatticeProblem::new(o, n1, n2, *priors)?;
    fit_empirical_bayes_on(&problem, opts)
}

pub fn fit_empirical_bayes_on(problem: &LatticeProblem, opts: &EbOptions) -> Result<LaplaceFit> {
    let sbox = opts
        .search_box
        .unwrap_or_else(|| SearchBox::for_lattice(problem.n1, problem.n2));
    sbox.validate()?;
    let start = opts.start.unwrap_or_else(|| default_start(problem.n1));
    start.validate()?;
    let x0 = sbox.clamp_log(start.to_log());

    let mut warm: Option<Vec<f64>> = None;
    let mut best: Option<(f64, Hyperparams, NewtonOutcome)> = None;
    let mut failures = 0usize;
    let objective = |x: &[f64]| -> f64 {
        let theta = sbox.theta_at([x[0], x[1], x[2]]);
        match problem.log_marginal(&theta, warm.as_deref(), &opts.fit) {
            Ok((lm, out)) if lm.is_finite() => {
                log::debug!(
                    "theta kappa={} sigma2={} tau={} -> log marginal {lm}",
                    theta.kappa,
                    theta.sigma2_m,
                    theta.tau_iid
                );
                warm = Some(out.x.clone());
                if best.as_ref().is_none_or(|b| lm > b.0) {
                    best = Some((lm, theta, out));
                }
                -lm
            }
            Ok(_) | Err(_) => {
                failures += 1;
                f64::INFINITY
            }
        }
    };
    let min = nelder_mead(
        objective,
        &x0,
        &[0.4, 0.7, 1.0],
        opts.max_evals.max(1),
        opts.ftol,
    );
    let Some((_, theta_hat, out)) = best else {
        return Err(Error::SearchFailed(min.evaluations));
    };
    if failures > 0 {
        log::warn!(
            "{failures} of {} log-marginal evaluations failed",
            min.evaluations
        );
    }
    let model = problem.model(&theta_hat, opts.fit.calibration)?;
    let mut fit = finish_fit(
        &model,
        out,
        theta_hat,
        &problem.priors,
        &opts.fit,
        min.evaluations,
    )?;
    if let Some(k) = opts.theta_grid.filter(|&k| k > 1) {
        let (posterior, used) = grid_average(problem, &fit, k, opts)?;
        fit.posterior = posterior;
        fit.diagnostics.grid_points = used;
    }
    Ok(fit)
}

/// Mixture of the fixed-θ posteriors over a `k³` log-grid centred on θ̂,
/// weighted by `exp(log marginal)`.
fn grid_average(
    problem: &LatticeProblem,
    centre: &LaplaceFit,
    k: usize,
    opts: &EbOptions,
) -> Result<(PosteriorP, usize)> {
    let c = centre.theta_hat.to_log();
    let half = (k as f64 - 1.0) / 2.0;
    let offs: Vec<f64> = (0..k).map(|j| (j as f64 - half) * opts.grid_step).collect();
    let init = centre.mode.to_vec();
    let mut fits: Vec<(f64, PosteriorP)> = Vec::new();
    for &a in &offs {
        for &b in &offs {
            for &g in &offs {
                let theta = Hyperparams::from_log([c[0] + a, c[1] + b, c[2] + g]);
                match problem.fit(&theta, Some(&init), &opts.fit) {
                    Ok(f) if f.log_marginal.is_finite() => fits.push((f.log_marginal, f.posterior)),
                    _ => log::warn!("grid point {theta:?} failed, skipped"),
                }
            }
        }
    }
    if fits.is_empty() {
        return Err(Error::SearchFailed(k * k * k));
    }
    let top = fits.iter().map(|f| f.0).fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = fits.iter().map(|f| (f.0 - top).exp()).collect();
    let total: f64 = weights.iter().sum();
    let n = problem.n();
    let mut mean = vec![0.0; n];
    let mut second = vec![0.0; n];
    for ((_, p), w) in fits.iter().zip(&weights) {
        let w = w / total;
        for i in 0..n {
            mean[i] += w * p.p_mean[i];
            second[i] += w * (p.p_var[i] + p.p_mean[i] * p.p_mean[i]);
        }
    }
    let var = mean.iter().zip(&second).map(|(m, s)| s - m * m).collect();
    Ok((
        PosteriorP {
            p_mean: mean,
            p_var: var,
        }
        .tidy(),
        fits.len(),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gmrf::{build_precision_with, chol_factor, lattice_nested_dissection, Ordering};
    use crate::inference::model::sigmoid;
    use crate::rng::{stream_rng, Stream};
    use rand::RngExt;

    #[test]
    fn nelder_mead_rosenbrock() {
        let f = |x: &[f64]| (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2);
        let m = nelder_mead(f, &[-1.2, 1.0], &[0.5, 0.5], 2000, 1e-14);
        assert!(
            (m.x[0] - 1.0).abs() < 1e-3 && (m.x[1] - 1.0).abs() < 1e-3,
            "{:?}",
            m.x
        );
        let q = |x: &[f64]| x.iter().map(|v| (v - 2.0) * (v - 2.0)).sum::<f64>();
        let m = nelder_mead(q, &[0.0; 3], &[1.0; 3], 30, 0.0);
        assert!(m.evaluations <= 30);
        assert!(m.f < q(&[0.0; 3]));
    }

    #[test]
    fn infinite_values_are_avoided() {
        let f = |x: &[f64]| {
            if x[0] < 0.0 {
                f64::INFINITY
            } else {
                (x[0] - 1.0).powi(2)
            }
        };
        let m = nelder_mead(f, &[0.1], &[-0.5], 200, 1e-12);
        assert!((m.x[0] - 1.0).abs() < 1e-4);
    }

    fn generative(n: usize, theta: &Hyperparams, mu: f64, seed: u64) -> Vec<u8> {
        let q = build_precision_with(&theta.matern(), n, n, Default::default()).unwrap();
        let f = chol_factor(&q, &Ordering::Given(lattice_nested_dissection(n, n, 2))).unwrap();
        let mut rng = stream_rng(seed, Stream::Field);
        let m = f.sample(&mut rng);
        let mut noise = stream_rng(seed, Stream::Noise);
        let mut bern = stream_rng(seed, Stream::Bernoulli);
        let sd = theta.tau_iid.powf(-0.5);
        m.iter()
            .map(|&v| {
                let e: f64 =
                    rand_distr::Distribution::sample(&rand_distr::StandardNormal, &mut noise);
                u8::from(bern.random::<f64>() < sigmoid(mu + v + sd * e))
            })
            .collect()
    }

    #[test]
    fn search_improves_on_start_and_is_deterministic() {
        let theta = Hyperparams::new(0.5, 2.0, 20.0).unwrap();
        let o = generative(16, &theta, -0.5, 3);
        let opts = EbOptions {
            max_evals: 30,
            ..EbOptions::default()
        };
        let a = fit_empirical_bayes(&o, 16, 16, &PriorSpec::default(), &opts).unwrap();
        let b = fit_empirical_bayes(&o, 16, 16, &PriorSpec::default(), &opts).unwrap();
        assert_eq!(a.theta_hat, b.theta_hat);
        assert_eq!(a.posterior, b.posterior);
        let prob = LatticeProblem::new(&o, 16, 16, PriorSpec::default()).unwrap();
        let (start_lm, _) = prob
            .log_marginal(&default_start(16), None, &opts.fit)
            .unwrap();
        assert!(a.log_marginal >= start_lm);
        assert!(a.diagnostics.evaluations <= 30);
        assert!(SearchBox::for_lattice(16, 16).contains(&a.theta_hat));
    }

    #[test]
    fn grid_average_stays_close() {
        let theta = Hyperparams::new(0.6, 1.0, 20.0).unwrap();
        let o = generative(8, &theta, 0.0, 4);
        let base = EbOptions {
            max_evals: 12,
            ..EbOptions::default()
        };
        let plain = fit_empirical_bayes(&o, 8, 8, &PriorSpec::default(), &base).unwrap();
        let grid = fit_empirical_bayes(
            &o,
            8,
            8,
            &PriorSpec::default(),
            &EbOptions {
                theta_grid: Some(3),
                ..base
            },
        )
        .unwrap();
        assert_eq!(grid.diagnostics.grid_points, 27);
        let sp = plain.expected_sparsity();
        let sg = grid.expected_sparsity();
        assert!((sp - sg).abs() < 0.05 * 64.0, "{sp} vs {sg}");
        assert!(grid.posterior.p_mean.iter().all(|&p| p > 0.0 && p < 1.0));
    }

    #[test]
    fn bad_box_rejected() {
        let o = vec![0u8; 64];
        let opts = EbOptions {
            search_box: Some(SearchBox {
                kappa: (1.0, 0.5),
                sigma2_m: (1.0, 2.0),
                tau_iid: (1.0, 2.0),
            }),
            ..EbOptions::default()
        };
        assert!(fit_empirical_bayes(&o, 8, 8, &PriorSpec::default(), &opts).is_err());
    }
}
