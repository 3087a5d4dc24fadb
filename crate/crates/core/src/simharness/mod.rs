//! Seeded replicate studies: generative and full-pipeline replicates,
//! aggregation and the output directory.
//!
//! Every replicate draws from `stream_rng(base_seed + index, ..)` only, so
//! results do not depend on scheduling or the worker count.

mod config;
mod report;

pub use config::{PhantomConfig, SimConfig, SimMode, ThetaChoice};
pub use report::{
    aggregate, diagnose_dir, read_output, write_output, AggregateReport, BlockSummary,
    DiagnosticsOptions, Range, BLOCKS_FILE, P_MEANS_FILE, QQ_FILE, REPLICATES_FILE, REPORT_FILE,
};

use std::time::Instant;

use rand::RngExt;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gmrf::{
    build_precision_with, chol_factor, lattice_nested_dissection, Calibration, CholFactor, Ordering,
};
use crate::imagio::generate_phantom;
use crate::inference::{
    fit_empirical_bayes_on, sigmoid, EbOptions, FitOptions, Hyperparams, LaplaceFit, LatticeProblem,
};
use crate::rng::{stream_rng, Stream};
use crate::wavelet::{dwt2, estimate_noise_sigma, hard_threshold, universal_threshold};

/// One row of `replicates.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateResult {
    pub index: usize,
    pub seed: u64,
    /// Non-zero count of the indicator that was fitted.
    pub s: u64,
    /// `Σ p_i` of the generating probabilities (generative mode).
    pub sum_p: Option<f64>,
    pub e_hat: f64,
    pub theta_hat: Hyperparams,
    pub fitted: bool,
    pub log_marginal: f64,
    pub newton_iters: usize,
    pub evaluations: usize,
    pub degenerate: bool,
    /// Noise estimate and threshold of the sparsifier (pipeline mode).
    pub sigma_hat: Option<f64>,
    pub threshold: Option<f64>,
    /// Wall time in seconds; logged, never written to disk.
    #[serde(skip)]
    pub runtime: f64,
}

/// Replicate table plus the per-replicate `E(p_i|o)` fields.
#[derive(Debug, Clone, PartialEq)]
pub struct StudyRun {
    pub results: Vec<ReplicateResult>,
    pub p_means: Vec<Vec<f64>>,
}

struct Shared {
    field_factor: Option<CholFactor>,
}

fn fit_indicator(cfg: &SimConfig, o: &[u8], seed: u64) -> Result<LaplaceFit> {
    let fit = FitOptions {
        laplace_samples: cfg.laplace_samples,
        seed,
        ..FitOptions::default()
    };
    let problem = LatticeProblem::new(o, cfg.n1, cfg.n2, cfg.priors)?;
    match cfg.theta {
        ThetaChoice::Fixed(theta) if !cfg.fit_hyperparams => problem.fit(&theta, None, &fit),
        _ => fit_empirical_bayes_on(
            &problem,
            &EbOptions {
                fit,
                max_evals: cfg.max_evals,
                ..EbOptions::default()
            },
        ),
    }
}

fn sample_indicator(
    cfg: &SimConfig,
    factor: &CholFactor,
    theta: &Hyperparams,
    seed: u64,
) -> (Vec<u8>, f64) {
    let m = factor.sample(&mut stream_rng(seed, Stream::Field));
    let mut noise = stream_rng(seed, Stream::Noise);
    let mut coin = stream_rng(seed, Stream::Bernoulli);
    let sd = theta.tau_iid.recip().sqrt();
    let mut sum_p = 0.0;
    let o = m
        .iter()
        .map(|&mi| {
            let eps: f64 = StandardNormal.sample(&mut noise);
            let p = sigmoid(cfg.mu + mi + sd * eps);
            sum_p += p;
            u8::from(coin.random::<f64>() < p)
        })
        .collect();
    (o, sum_p)
}

fn run_one(cfg: &SimConfig, shared: &Shared, index: usize) -> Result<(ReplicateResult, Vec<f64>)> {
    let start = Instant::now();
    let seed = cfg.seed(index);
    let (o, sum_p, sigma_hat, threshold) = match (cfg.mode, &shared.field_factor, &cfg.theta) {
        (SimMode::Generative, Some(factor), ThetaChoice::Fixed(theta)) => {
            let (o, sum_p) = sample_indicator(cfg, factor, theta, seed);
            (o, Some(sum_p), None, None)
        }
        (SimMode::Generative, ..) => {
            return Err(Error::InvalidArgument(
                "generative mode needs a fixed theta".into(),
            ));
        }
        (SimMode::Pipeline, ..) => {
            let img = generate_phantom(&cfg.phantom.spec(cfg.n1, cfg.n2, seed))?;
            let pyr = dwt2(&img)?;
            let sigma = estimate_noise_sigma(&pyr, cfg.sigma_band);
            let t = universal_threshold(sigma, img.len());
            let sci = hard_threshold(&pyr, t);
            (sci.indicator().to_vec(), None, Some(sigma), Some(t))
        }
    };
    let s = o.iter().map(|&v| v as u64).sum();
    let fit = fit_indicator(cfg, &o, seed)?;
    let result = ReplicateResult {
        index,
        seed,
        s,
        sum_p,
        e_hat: fit.expected_sparsity(),
        theta_hat: fit.theta_hat,
        fitted: cfg.fits_theta(),
        log_marginal: fit.log_marginal,
        newton_iters: fit.diagnostics.newton_iters,
        evaluations: fit.diagnostics.evaluations,
        degenerate: fit.diagnostics.boundary_degenerate,
        sigma_hat,
        threshold,
        runtime: start.elapsed().as_secs_f64(),
    };
    log::info!(
        "replicate {index} (seed {seed}): s={s} E={:.3} in {:.2}s",
        result.e_hat,
        result.runtime
    );
    Ok((result, fit.posterior.p_mean))
}

fn run(cfg: &SimConfig) -> Result<StudyRun> {
    cfg.validate()?;
    let field_factor = match (cfg.mode, &cfg.theta) {
        (SimMode::Generative, ThetaChoice::Fixed(theta)) => {
            let q = build_precision_with(&theta.matern(), cfg.n1, cfg.n2, Calibration::Lattice)?;
            let perm = lattice_nested_dissection(cfg.n1, cfg.n2, 2);
            Some(chol_factor(&q, &Ordering::Given(perm))?)
        }
        _ => None,
    };
    let shared = Shared { field_factor };
    let workers = cfg
        .workers
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::InvalidArgument(format!("cannot start {workers} workers: {e}")))?;
    let rows: Vec<Result<(ReplicateResult, Vec<f64>)>> = pool.install(|| {
        (0..cfg.replicates)
            .into_par_iter()
            .map(|i| run_one(cfg, &shared, i))
            .collect()
    });
    let mut results = Vec::with_capacity(rows.len());
    let mut p_means = Vec::with_capacity(rows.len());
    for row in rows {
        let (r, p) = row?;
        results.push(r);
        p_means.push(p);
    }
    Ok(StudyRun { results, p_means })
}

/// Replicates whose indicators are drawn from the model at a known θ.
pub fn run_generative(cfg: &SimConfig) -> Result<StudyRun> {
    if cfg.mode != SimMode::Generative {
        return Err(Error::InvalidArgument(
            "config mode is not generative".into(),
        ));
    }
    if cfg.theta == ThetaChoice::Fit {
        return Err(Error::InvalidArgument(
            "generative mode needs a fixed theta to draw the field".into(),
        ));
    }
    run(cfg)
}

/// Phantom replicates pushed through the wavelet sparsifier and the fit.
pub fn run_pipeline(cfg: &SimConfig) -> Result<StudyRun> {
    if cfg.mode != SimMode::Pipeline {
        return Err(Error::InvalidArgument("config mode is not pipeline".into()));
    }
    run(cfg)
}

/// Runs the configured study and writes the output directory.
pub fn simulate(cfg: &SimConfig) -> Result<AggregateReport> {
    let study = match cfg.mode {
        SimMode::Generative => run_generative(cfg)?,
        SimMode::Pipeline => run_pipeline(cfg)?,
    };
    let diag = DiagnosticsOptions {
        phi: cfg.phi,
        rho_star: cfg.rho_star,
        test: cfg.normality_test,
    };
    let report = aggregate(cfg.mode, cfg.n1, cfg.n2, cfg.base_seed, &study, &diag)?;
    write_output(&cfg.output_dir, &study, &report)?;
    Ok(report)
}
