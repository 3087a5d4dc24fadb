//! Damped Newton mode search on the joint latent vector.

use serde::{Deserialize, Serialize};

use super::model::{LatentState, Model};
use crate::error::{Error, Result};
use crate::gmrf::CholFactor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NewtonOptions {
    /// Stop once the gradient ∞-norm is at most this.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iter: 50,
        }
    }
}

/// Mode, Hessian factor at the mode and the iteration record.
#[derive(Debug, Clone)]
pub struct NewtonOutcome {
    pub x: Vec<f64>,
    pub value: f64,
    pub grad_norm: f64,
    pub iterations: usize,
    /// Objective after each accepted step, starting with the initial value.
    pub trace: Vec<f64>,
    pub factor: CholFactor,
}

impl NewtonOutcome {
    pub fn mode(&self) -> LatentState {
        LatentState::from_vec(&self.x).expect("joint vector has odd length")
    }
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |a, b| a.max(b.abs()))
}

const MAX_HALVINGS: usize = 40;

pub fn newton(model: &Model, init: &[f64], opts: &NewtonOptions) -> Result<NewtonOutcome> {
    if !(opts.tol > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "Newton tolerance must be > 0, got {}",
            opts.tol
        )));
    }
    let mut x = init.to_vec();
    let mut f = model.kernel(&x)?;
    let offset = model.value(&x)? - f;
    let mut trace = vec![f + offset];
    let mut iterations = 0;
    let mut g = model.gradient(&x)?;
    loop {
        let gn = inf_norm(&g);
        let factor = model.factor_hessian(&x)?;
        if gn <= opts.tol {
            return Ok(NewtonOutcome {
                x,
                value: f + offset,
                grad_norm: gn,
                iterations,
                trace,
                factor,
            });
        }
        if iterations >= opts.max_iter {
            return Err(Error::NonConvergence {
                iterations,
                grad_norm: gn,
            });
        }
        let step = factor.solve(&g)?;
        let predicted: f64 = g.iter().zip(&step).map(|(a, b)| a * b).sum();
        // Below this the objective cannot resolve the decrease and the
        // gradient decides instead.
        let noise = 1e3 * f64::EPSILON * f.abs().max(1.0);
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..MAX_HALVINGS {
            let trial: Vec<f64> = x.iter().zip(&step).map(|(a, d)| a - t * d).collect();
            let ft = model.kernel(&trial)?;
            if !ft.is_finite() {
                t *= 0.5;
                continue;
            }
            if ft <= f {
                let gt = model.gradient(&trial)?;
                accepted = Some((trial, ft, gt));
                break;
            }
            if predicted <= noise && ft <= f + noise {
                let gt = model.gradient(&trial)?;
                if inf_norm(&gt) < gn {
                    accepted = Some((trial, f.min(ft), gt));
                    break;
                }
            }
            t *= 0.5;
        }
        let Some((xn, fnew, gnew)) = accepted else {
            return Err(Error::NonConvergence {
                iterations,
                grad_norm: gn,
            });
        };
        x = xn;
        f = fnew;
        g = gnew;
        trace.push(f + offset);
        iterations += 1;
        log::trace!("newton iter {iterations}: f={f} |g|={gn} step={t}");
    }
}

/// Mode of the joint posterior starting at `init`.
pub fn newton_map(
    model: &Model,
    init: &LatentState,
    opts: &NewtonOptions,
) -> Result<NewtonOutcome> {
    init.validate()?;
    newton(model, &init.to_vec(), opts)
}
