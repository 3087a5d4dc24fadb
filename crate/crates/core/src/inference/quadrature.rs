//! Gauss–Hermite quadrature for logistic-normal moments.

use serde::{Deserialize, Serialize};

use super::model::sigmoid;
use crate::error::{Error, Result};

pub const DEFAULT_GH_ORDER: usize = 20;

/// Nodes and weights for `E f(Z)`, `Z ~ N(0,1)` written as
/// `Σ w_k f(√2 t_k)`. Weights sum to one.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussHermite {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl GaussHermite {
    pub fn new(order: usize) -> Result<Self> {
        if order == 0 || order > 200 {
            return Err(Error::InvalidArgument(format!(
                "Gauss-Hermite order must be in 1..=200, got {order}"
            )));
        }
        let n = order;
        let mut x = vec![0.0; n];
        let mut w = vec![0.0; n];
        let pim4 = std::f64::consts::PI.powf(-0.25);
        let m = n.div_ceil(2);
        let nf = n as f64;
        let mut z = 0.0f64;
        for i in 0..m {
            z = match i {
                0 => (2.0 * nf + 1.0).sqrt() - 1.85575 * (2.0 * nf + 1.0).powf(-1.0 / 6.0),
                1 => z - 1.14 * nf.powf(0.426) / z,
                2 => 1.86 * z - 0.86 * x[0],
                3 => 1.91 * z - 0.91 * x[1],
                _ => 2.0 * z - x[i - 2],
            };
            let mut pp = 0.0;
            for _ in 0..100 {
                // Orthonormal Hermite recurrence.
                let mut p1 = pim4;
                let mut p2 = 0.0;
                for j in 1..=n {
                    let p3 = p2;
                    p2 = p1;
                    let jf = j as f64;
                    p1 = z * (2.0 / jf).sqrt() * p2 - ((jf - 1.0) / jf).sqrt() * p3;
                }
                pp = (2.0 * nf).sqrt() * p2;
                let z1 = z;
                z = z1 - p1 / pp;
                if (z - z1).abs() <= 1e-15 * z.abs().max(1.0) {
                    break;
                }
            }
            x[i] = z;
            x[n - 1 - i] = -z;
            w[i] = 2.0 / (pp * pp);
            w[n - 1 - i] = w[i];
        }
        let total: f64 = w.iter().sum();
        w.iter_mut().for_each(|v| *v /= total);
        Ok(Self {
            nodes: x,
            weights: w,
        })
    }

    pub fn order(&self) -> usize {
        self.nodes.len()
    }

    /// Physicists' nodes `t_k`.
    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// `E[f(X)]` for `X ~ N(mean, var)`.
    pub fn expect(&self, mean: f64, var: f64, f: impl Fn(f64) -> f64) -> f64 {
        let s = (2.0 * var.max(0.0)).sqrt();
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&t, &w)| w * f(mean + s * t))
            .sum()
    }

    /// `(E σ(X), E σ(X)²)`.
    pub fn logistic_moments(&self, mean: f64, var: f64) -> (f64, f64) {
        let s = (2.0 * var.max(0.0)).sqrt();
        let mut m1 = 0.0;
        let mut m2 = 0.0;
        for (&t, &w) in self.nodes.iter().zip(&self.weights) {
            let p = sigmoid(mean + s * t);
            m1 += w * p;
            m2 += w * p * p;
        }
        (m1, m2)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorP {
    pub p_mean: Vec<f64>,
    pub p_var: Vec<f64>,
}

impl PosteriorP {
    pub fn n(&self) -> usize {
        self.p_mean.len()
    }

    /// Clamps into the open unit interval and the Bernoulli variance bound.
    pub(crate) fn tidy(mut self) -> Self {
        let lo = f64::MIN_POSITIVE;
        for p in &mut self.p_mean {
            *p = p.clamp(lo, 1.0 - f64::EPSILON / 2.0);
        }
        for v in &mut self.p_var {
            *v = v.clamp(0.0, 0.25);
        }
        self
    }
}

/// Per-pixel `E(p_i|o)` and `Var(p_i|o)` from Gaussian logit marginals.
pub fn posterior_p_means_with(
    eta_mean: &[f64],
    eta_var: &[f64],
    rule: &GaussHermite,
) -> Result<PosteriorP> {
    if eta_mean.len() != eta_var.len() {
        return Err(Error::DimensionMismatch {
            expected: eta_mean.len(),
            got: eta_var.len(),
        });
    }
    if let Some(v) = eta_var.iter().find(|v| !(**v >= 0.0 && v.is_finite())) {
        return Err(Error::InvalidArgument(format!(
            "logit variances must be finite and >= 0, found {v}"
        )));
    }
    let mut p_mean = Vec::with_capacity(eta_mean.len());
    let mut p_var = Vec::with_capacity(eta_mean.len());
    for (&m, &v) in eta_mean.iter().zip(eta_var) {
        let (m1, m2) = rule.logistic_moments(m, v);
        p_mean.push(m1);
        p_var.push(m2 - m1 * m1);
    }
    Ok(PosteriorP { p_mean, p_var }.tidy())
}

pub fn posterior_p_means(eta_mean: &[f64], eta_var: &[f64]) -> Result<PosteriorP> {
    posterior_p_means_with(eta_mean, eta_var, &GaussHermite::new(DEFAULT_GH_ORDER)?)
}
