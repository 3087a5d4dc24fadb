//! Single-site random-walk Metropolis-within-Gibbs over `(η, m, μ)`, used to
//! validate the Laplace path on small lattices. Each sweep also proposes two
//! joint shifts along the weakly identified intercept directions.

use rand::RngExt;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::model::{sigmoid, softplus, Model};
use super::quadrature::PosteriorP;
use crate::error::{Error, Result};
use crate::rng::{stream_rng, Stream};

fn gauss<R: rand::Rng>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

pub const MAX_MCMC_PIXELS: usize = 400;
const TUNE_EVERY: usize = 50;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct McmcResult {
    pub posterior: PosteriorP,
    /// Post-burn-in acceptance rates for the site-wise η, m and μ updates
    /// and the two joint shift moves.
    pub acceptance: [f64; 5],
    pub proposal_scales: [f64; 5],
    pub warnings: Vec<String>,
}

/// `n_iter` full sweeps after `burn_in` tuning sweeps. Returns Monte-Carlo
/// means and variances of `σ(η_i)`.
pub fn mcmc_oracle(model: &Model, n_iter: usize, burn_in: usize, seed: u64) -> Result<McmcResult> {
    let n = model.n();
    if n > MAX_MCMC_PIXELS {
        return Err(Error::InvalidArgument(format!(
            "MCMC oracle is limited to {MAX_MCMC_PIXELS} pixels, got {n}"
        )));
    }
    if n_iter == 0 {
        return Err(Error::InvalidArgument(
            "MCMC needs at least one iteration".into(),
        ));
    }
    let q = model.precision();
    let o = model.observations();
    let tau = model.tau_iid();
    let p_mu = model.mu_precision();

    let mut rng = stream_rng(seed, Stream::Mcmc);
    let init = model.default_init();
    let mut eta = init[..n].to_vec();
    let mut m = vec![0.0; n];
    let mut mu = init[2 * n];
    let mut qm = vec![0.0; n];
    let q_diag = q.diag();
    let q_row_sums: Vec<f64> = (0..n).map(|i| q.row(i).1.iter().sum()).collect();
    let q_total: f64 = q_row_sums.iter().sum();
    let mut scale = [1.0f64, 0.5, 0.1, 0.1, 0.1];
    let mut acc = [0usize; 5];
    let mut tries = [0usize; 5];
    let mut sum_p = vec![0.0; n];
    let mut sum_p2 = vec![0.0; n];

    for sweep in 0..burn_in + n_iter {
        for i in 0..n {
            let cur = eta[i];
            let prop = cur + scale[0] * gauss(&mut rng);
            let base = mu + m[i];
            let d = o[i] * (prop - cur) - softplus(prop) + softplus(cur)
                - 0.5 * tau * ((prop - base).powi(2) - (cur - base).powi(2));
            tries[0] += 1;
            if d >= 0.0 || rng.random::<f64>().ln() < d {
                eta[i] = prop;
                acc[0] += 1;
            }
        }
        for i in 0..n {
            let delta = scale[1] * gauss(&mut rng);
            let r = eta[i] - mu - m[i];
            let d = -(delta * qm[i] + 0.5 * q_diag[i] * delta * delta)
                - 0.5 * tau * ((r - delta).powi(2) - r * r);
            tries[1] += 1;
            if d >= 0.0 || rng.random::<f64>().ln() < d {
                m[i] += delta;
                let (cols, vals) = q.row(i);
                for (&j, &v) in cols.iter().zip(vals) {
                    qm[j] += v * delta;
                }
                acc[1] += 1;
            }
        }
        {
            let delta = scale[2] * gauss(&mut rng);
            let sum_r: f64 = (0..n).map(|i| eta[i] - mu - m[i]).sum();
            let d = -0.5 * tau * (n as f64 * delta * delta - 2.0 * delta * sum_r)
                - 0.5 * p_mu * ((mu + delta).powi(2) - mu * mu);
            tries[2] += 1;
            if d >= 0.0 || rng.random::<f64>().ln() < d {
                mu += delta;
                acc[2] += 1;
            }
        }
        // Shift all logits with the intercept: residuals are unchanged.
        {
            let delta = scale[3] * gauss(&mut rng);
            let mut d = -0.5 * p_mu * ((mu + delta).powi(2) - mu * mu);
            for i in 0..n {
                d += o[i] * delta - softplus(eta[i] + delta) + softplus(eta[i]);
            }
            tries[3] += 1;
            if d >= 0.0 || rng.random::<f64>().ln() < d {
                eta.iter_mut().for_each(|e| *e += delta);
                mu += delta;
                acc[3] += 1;
            }
        }
        // Trade the intercept against a constant structured offset.
        {
            let delta = scale[4] * gauss(&mut rng);
            let one_qm: f64 = qm.iter().sum();
            let d = -(delta * one_qm + 0.5 * delta * delta * q_total)
                - 0.5 * p_mu * ((mu - delta).powi(2) - mu * mu);
            tries[4] += 1;
            if d >= 0.0 || rng.random::<f64>().ln() < d {
                m.iter_mut().for_each(|v| *v += delta);
                for (x, r) in qm.iter_mut().zip(&q_row_sums) {
                    *x += delta * r;
                }
                mu -= delta;
                acc[4] += 1;
            }
        }
        if sweep < burn_in {
            if (sweep + 1) % TUNE_EVERY == 0 {
                for k in 0..5 {
                    let rate = acc[k] as f64 / tries[k] as f64;
                    if rate > 0.5 {
                        scale[k] *= 1.2;
                    } else if rate < 0.3 {
                        scale[k] /= 1.2;
                    }
                }
                acc = [0; 5];
                tries = [0; 5];
            }
            if sweep + 1 == burn_in {
                acc = [0; 5];
                tries = [0; 5];
            }
            continue;
        }
        for i in 0..n {
            let p = sigmoid(eta[i]);
            sum_p[i] += p;
            sum_p2[i] += p * p;
        }
    }
    let k = n_iter as f64;
    let p_mean: Vec<f64> = sum_p.iter().map(|s| s / k).collect();
    let p_var = sum_p2
        .iter()
        .zip(&p_mean)
        .map(|(s, m)| s / k - m * m)
        .collect();
    let acceptance = [0, 1, 2, 3, 4].map(|j| acc[j] as f64 / tries[j].max(1) as f64);
    let mut warnings = Vec::new();
    for (name, rate) in ["eta", "m", "mu", "eta-mu shift", "m-mu shift"]
        .iter()
        .zip(acceptance)
    {
        if !(0.2..=0.6).contains(&rate) {
            let w = format!("{name} acceptance rate {rate:.3} outside the tuned band");
            log::warn!("{w}");
            warnings.push(w);
        }
    }
    Ok(McmcResult {
        posterior: PosteriorP { p_mean, p_var }.tidy(),
        acceptance,
        proposal_scales: scale,
        warnings,
    })
}
