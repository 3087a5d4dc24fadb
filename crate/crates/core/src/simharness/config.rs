//! Study configuration read from JSON.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::estimator::{NormalityTest, DEFAULT_RHO_STAR};
use crate::imagio::{Ellipse, PhantomSpec};
use crate::inference::{Hyperparams, PriorSpec, DEFAULT_LAPLACE_SAMPLES};
use crate::wavelet::SigmaBand;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SimMode {
    /// Indicators drawn from the model itself.
    Generative,
    /// Phantom, wavelet sparsifier, then the fit.
    Pipeline,
}

impl std::fmt::Display for SimMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SimMode::Generative => "generative",
            SimMode::Pipeline => "pipeline",
        })
    }
}

/// Known hyperparameters, or `"fit"` for empirical Bayes per replicate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ThetaChoice {
    Fixed(Hyperparams),
    Fit,
}

impl Serialize for ThetaChoice {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            ThetaChoice::Fixed(t) => t.serialize(s),
            ThetaChoice::Fit => s.serialize_str("fit"),
        }
    }
}

impl<'de> Deserialize<'de> for ThetaChoice {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let v = serde_json::Value::deserialize(d)?;
        match v {
            serde_json::Value::String(s) if s == "fit" => Ok(ThetaChoice::Fit),
            serde_json::Value::String(s) => Err(D::Error::custom(format!(
                "theta: expected an object or \"fit\", got \"{s}\""
            ))),
            other => Hyperparams::deserialize(other)
                .map(ThetaChoice::Fixed)
                .map_err(|e| D::Error::custom(format!("theta: {e}"))),
        }
    }
}

fn default_noise_sigma() -> f64 {
    0.02
}

/// Phantom used in pipeline mode. Without `ellipses` the modified
/// Shepp-Logan head is scaled to the lattice.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhantomConfig {
    #[serde(default = "default_noise_sigma")]
    pub noise_sigma: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ellipses: Option<Vec<Ellipse>>,
}

impl Default for PhantomConfig {
    fn default() -> Self {
        Self {
            noise_sigma: default_noise_sigma(),
            ellipses: None,
        }
    }
}

impl PhantomConfig {
    pub fn spec(&self, n1: usize, n2: usize, seed: u64) -> PhantomSpec {
        let mut spec = PhantomSpec::shepp_logan(n1, n2, self.noise_sigma, seed);
        if let Some(e) = &self.ellipses {
            spec.ellipses = e.clone();
        }
        spec
    }
}

fn default_mu() -> f64 {
    -1.0
}

fn default_rho_star() -> usize {
    DEFAULT_RHO_STAR
}

fn default_laplace_samples() -> usize {
    DEFAULT_LAPLACE_SAMPLES
}

fn default_max_evals() -> usize {
    100
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub mode: SimMode,
    pub n1: usize,
    pub n2: usize,
    pub replicates: usize,
    pub base_seed: u64,
    pub theta: ThetaChoice,
    pub output_dir: PathBuf,
    /// Intercept of the generating field.
    #[serde(default = "default_mu")]
    pub mu: f64,
    #[serde(default)]
    pub priors: PriorSpec,
    #[serde(default)]
    pub phantom: PhantomConfig,
    #[serde(default)]
    pub sigma_band: SigmaBand,
    /// Square half-width for the block diagnostics; chosen from the lattice when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phi: Option<usize>,
    #[serde(default = "default_rho_star")]
    pub rho_star: usize,
    #[serde(default)]
    pub normality_test: NormalityTest,
    /// Thread count; all cores when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub workers: Option<usize>,
    #[serde(default = "default_laplace_samples")]
    pub laplace_samples: usize,
    #[serde(default = "default_max_evals")]
    pub max_evals: usize,
    /// Generative mode: draw at the fixed θ but estimate it by empirical Bayes.
    #[serde(default)]
    pub fit_hyperparams: bool,
}

impl SimConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: SimConfig = serde_json::from_str(text)
            .map_err(|e| Error::Parse(format!("simulation config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.replicates == 0 {
            return Err(Error::InvalidArgument("replicates must be >= 1".into()));
        }
        if self.n1 < 8 || self.n2 < 8 || !self.n1.is_multiple_of(8) || !self.n2.is_multiple_of(8) {
            return Err(Error::InvalidArgument(format!(
                "lattice {}x{} must have both sides divisible by 8 and at least 8",
                self.n1, self.n2
            )));
        }
        if !self.mu.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "mu must be finite, got {}",
                self.mu
            )));
        }
        if let ThetaChoice::Fixed(t) = &self.theta {
            t.validate()?;
        }
        if self.mode == SimMode::Generative && self.n1 * self.n2 > 1 << 20 {
            return Err(Error::InvalidArgument(
                "generative lattice is too large".into(),
            ));
        }
        self.priors.validate()?;
        self.phantom.spec(self.n1, self.n2, 0).validate()?;
        if self.workers == Some(0) {
            return Err(Error::InvalidArgument("workers must be >= 1".into()));
        }
        if self.laplace_samples < 2 {
            return Err(Error::InvalidArgument(
                "laplace_samples must be >= 2".into(),
            ));
        }
        if self.rho_star == 0 || self.phi.is_some_and(|p| p <= self.rho_star) {
            return Err(Error::InvalidArgument(format!(
                "block diagnostics need phi > rho_star >= 1 (phi {:?}, rho_star {})",
                self.phi, self.rho_star
            )));
        }
        Ok(())
    }

    /// Whether each replicate estimates θ.
    pub fn fits_theta(&self) -> bool {
        self.theta == ThetaChoice::Fit || self.fit_hyperparams
    }

    pub fn n_pixels(&self) -> usize {
        self.n1 * self.n2
    }

    /// Seed of replicate `index`.
    pub fn seed(&self, index: usize) -> u64 {
        self.base_seed.wrapping_add(index as u64)
    }
}
