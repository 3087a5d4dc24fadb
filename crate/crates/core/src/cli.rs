//! Command-line front end.
//!
//! Exit codes: 0 success, 1 internal failure, 2 bad input, 3 non-convergence.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::{abs_diff_percent, NormalityTest, DEFAULT_RHO_STAR};
use crate::imagio::{encode_csv_matrix, load_image, write_atomic, ImageFormat};
use crate::inference::{
    fit_empirical_bayes_on, EbOptions, FitOptions, Hyperparams, LatticeProblem, PriorSpec,
    DEFAULT_LAPLACE_SAMPLES,
};
use crate::simharness::{diagnose_dir, simulate, DiagnosticsOptions, SimConfig};
use crate::wavelet::{
    dwt2, estimate_noise_sigma, hard_threshold, load_sparse, save_sparse, universal_threshold,
    SigmaBand,
};

pub const LOG_ENV: &str = "SPARSITY_BHM_LOG";

#[derive(Debug, Parser)]
#[command(
    name = "sparsity-bhm",
    version,
    about = "Expected-sparsity estimation for 2D signals"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Haar transform and hard threshold an image into a coefficient CSV plus JSON sidecar.
    Sparsify {
        image: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Fixed threshold instead of the universal one.
        #[arg(long)]
        threshold: Option<f64>,
        #[arg(long, default_value_t = SigmaBand::Pooled)]
        sigma_band: SigmaBand,
        /// `pgm` or `csv`; guessed from the extension otherwise.
        #[arg(long)]
        format: Option<ImageFormat>,
    },
    /// Fit the hierarchical model to a coefficient CSV and report E(s).
    Fit {
        coeffs: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Known `kappa,sigma2,tau`; skips empirical Bayes.
        #[arg(long, value_parser = parse_theta)]
        theta: Option<Hyperparams>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// JSON file with hyperprior settings.
        #[arg(long)]
        priors: Option<PathBuf>,
        #[arg(long, default_value_t = DEFAULT_LAPLACE_SAMPLES)]
        laplace_samples: usize,
        #[arg(long, default_value_t = 100)]
        max_evals: usize,
    },
    /// Run a replicate study described by a JSON config.
    Simulate {
        config: PathBuf,
        #[arg(long)]
        workers: Option<usize>,
        /// Overrides the config's output directory.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Overrides the config's base seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        phi: Option<usize>,
        #[arg(long)]
        rho_star: Option<usize>,
    },
    /// Recompute block ratios, the normality test and QQ points of a study directory.
    Diagnose {
        dir: PathBuf,
        #[arg(long)]
        phi: Option<usize>,
        #[arg(long, default_value_t = DEFAULT_RHO_STAR)]
        rho_star: usize,
        #[arg(long, value_enum, default_value_t = TestArg::ShapiroWilk)]
        test: TestArg,
    },
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
pub enum TestArg {
    ShapiroWilk,
    DagostinoK2,
}

impl From<TestArg> for NormalityTest {
    fn from(t: TestArg) -> Self {
        match t {
            TestArg::ShapiroWilk => NormalityTest::ShapiroWilk,
            TestArg::DagostinoK2 => NormalityTest::DagostinoK2,
        }
    }
}

fn parse_theta(s: &str) -> std::result::Result<Hyperparams, String> {
    Hyperparams::parse_triple(s).map_err(|e| e.to_string())
}

/// Machine-readable result of `fit`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub estimate: f64,
    pub s: usize,
    pub n: usize,
    pub n1: usize,
    pub n2: usize,
    pub abs_diff_percent: f64,
    pub theta_hat: Hyperparams,
    /// `fixed` or `empirical_bayes`.
    pub provenance: String,
    pub log_marginal: f64,
    pub newton_iters: usize,
    pub evaluations: usize,
    pub boundary_degenerate: bool,
    pub seed: u64,
    pub p_mean_csv: PathBuf,
    pub p_var_csv: PathBuf,
}

fn require_parent(out: &Path) -> Result<()> {
    let parent = match out.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    if !parent.is_dir() {
        return Err(Error::InvalidArgument(format!(
            "output directory {} does not exist",
            parent.display()
        )));
    }
    if out.file_name().is_none() {
        return Err(Error::InvalidArgument(format!(
            "not a file path: {}",
            out.display()
        )));
    }
    Ok(())
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    path.with_file_name(format!("{stem}{suffix}"))
}

pub fn cmd_sparsify(
    image: &Path,
    out: &Path,
    threshold: Option<f64>,
    sigma_band: SigmaBand,
    format: Option<ImageFormat>,
) -> Result<()> {
    require_parent(out)?;
    if let Some(t) = threshold {
        if !(t >= 0.0 && t.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "threshold must be finite and >= 0, got {t}"
            )));
        }
    }
    let img = load_image(
        image,
        format.unwrap_or_else(|| ImageFormat::from_path(image)),
    )?;
    let pyr = dwt2(&img)?;
    let sigma = estimate_noise_sigma(&pyr, sigma_band);
    let t = threshold.unwrap_or_else(|| universal_threshold(sigma, img.len()));
    let sci = hard_threshold(&pyr, t);
    let side = save_sparse(&sci, out, sigma_band, Some(sigma))?;
    println!(
        "s = {}  N = {}  threshold = {}  sigma_hat = {}",
        side.s,
        img.len(),
        t,
        sigma
    );
    Ok(())
}

pub fn cmd_fit(
    coeffs: &Path,
    out: &Path,
    theta: Option<Hyperparams>,
    seed: u64,
    priors: Option<&Path>,
    laplace_samples: usize,
    max_evals: usize,
) -> Result<FitReport> {
    require_parent(out)?;
    let priors = match priors {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            let spec: PriorSpec = serde_json::from_str(&text)
                .map_err(|e| Error::Parse(format!("{}: {e}", p.display())))?;
            spec.validate()?;
            spec
        }
        None => PriorSpec::default(),
    };
    let (sci, _) = load_sparse(coeffs)?;
    let (n1, n2) = (sci.n1(), sci.n2());
    let problem = LatticeProblem::new(sci.indicator(), n1, n2, priors)?;
    let fit_opts = FitOptions {
        laplace_samples,
        seed,
        ..FitOptions::default()
    };
    let (fit, provenance) = match theta {
        Some(t) => (problem.fit(&t, None, &fit_opts)?, "fixed"),
        None => (
            fit_empirical_bayes_on(
                &problem,
                &EbOptions {
                    fit: fit_opts,
                    max_evals,
                    ..EbOptions::default()
                },
            )?,
            "empirical_bayes",
        ),
    };
    let estimate = fit.expected_sparsity();
    let n = n1 * n2;
    let p_mean_csv = with_suffix(out, ".p_mean.csv");
    let p_var_csv = with_suffix(out, ".p_var.csv");
    write_atomic(
        &p_mean_csv,
        encode_csv_matrix(n1, n2, &fit.posterior.p_mean).as_bytes(),
    )?;
    write_atomic(
        &p_var_csv,
        encode_csv_matrix(n1, n2, &fit.posterior.p_var).as_bytes(),
    )?;
    let report = FitReport {
        estimate,
        s: sci.sparsity(),
        n,
        n1,
        n2,
        abs_diff_percent: abs_diff_percent(estimate, sci.sparsity() as f64, n)?,
        theta_hat: fit.theta_hat,
        provenance: provenance.into(),
        log_marginal: fit.log_marginal,
        newton_iters: fit.diagnostics.newton_iters,
        evaluations: fit.diagnostics.evaluations,
        boundary_degenerate: fit.diagnostics.boundary_degenerate,
        seed,
        p_mean_csv: p_mean_csv
            .file_name()
            .map(PathBuf::from)
            .unwrap_or_default(),
        p_var_csv: p_var_csv.file_name().map(PathBuf::from).unwrap_or_default(),
    };
    write_atomic(out, serde_json::to_string_pretty(&report)?.as_bytes())?;
    println!("E(s) = {estimate}");
    println!("|E(s) - s| * 100 / N = {}", report.abs_diff_percent);
    Ok(report)
}

pub fn cmd_simulate(
    config: &Path,
    workers: Option<usize>,
    out: Option<PathBuf>,
    seed: Option<u64>,
    phi: Option<usize>,
    rho_star: Option<usize>,
) -> Result<()> {
    let mut cfg = SimConfig::load(config)?;
    if workers.is_some() {
        cfg.workers = workers;
    }
    if let Some(o) = out {
        cfg.output_dir = o;
    }
    if let Some(s) = seed {
        cfg.base_seed = s;
    }
    if phi.is_some() {
        cfg.phi = phi;
    }
    if let Some(r) = rho_star {
        cfg.rho_star = r;
    }
    cfg.validate()?;
    let rep = simulate(&cfg)?;
    println!(
        "E_sim = {}  mean E = {}  bias = {}%  mean |E_sim - E| = {}%",
        rep.e_sim, rep.mean_e_hat, rep.bias_percent, rep.abs_diff_sim.mean
    );
    if let Some(n) = &rep.normality {
        println!("normality p = {}", n.p_value);
    }
    Ok(())
}

pub fn cmd_diagnose(
    dir: &Path,
    phi: Option<usize>,
    rho_star: usize,
    test: NormalityTest,
) -> Result<()> {
    if !dir.is_dir() {
        return Err(Error::InvalidArgument(format!(
            "{} is not a directory",
            dir.display()
        )));
    }
    if rho_star == 0 || phi.is_some_and(|p| p <= rho_star) {
        return Err(Error::InvalidArgument(format!(
            "block diagnostics need phi > rho_star >= 1 (phi {phi:?}, rho_star {rho_star})"
        )));
    }
    let rep = diagnose_dir(
        dir,
        &DiagnosticsOptions {
            phi,
            rho_star,
            test,
        },
    )?;
    if let Some(b) = &rep.blocks {
        println!(
            "phi = {}  rho* = {}  squares = {}  b1 = {:?}  b2 = {:?}",
            b.phi, b.rho_star, b.n_sq, b.ratio_b1, b.ratio_b2
        );
    }
    if let Some(n) = &rep.normality {
        println!(
            "{:?}: statistic = {}  p = {}",
            n.test, n.statistic, n.p_value
        );
    }
    Ok(())
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Sparsify {
            image,
            out,
            threshold,
            sigma_band,
            format,
        } => cmd_sparsify(&image, &out, threshold, sigma_band, format),
        Command::Fit {
            coeffs,
            out,
            theta,
            seed,
            priors,
            laplace_samples,
            max_evals,
        } => cmd_fit(
            &coeffs,
            &out,
            theta,
            seed,
            priors.as_deref(),
            laplace_samples,
            max_evals,
        )
        .map(|_| ()),
        Command::Simulate {
            config,
            workers,
            out,
            seed,
            phi,
            rho_star,
        } => cmd_simulate(&config, workers, out, seed, phi, rho_star),
        Command::Diagnose {
            dir,
            phi,
            rho_star,
            test,
        } => cmd_diagnose(&dir, phi, rho_star, test.into()),
    }
}

/// Parses `args` (program name first), runs the command and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn init_logging() {
    let env = env_logger::Env::new().filter_or(LOG_ENV, "warn");
    let _ = env_logger::Builder::from_env(env)
        .format_timestamp(None)
        .try_init();
}
