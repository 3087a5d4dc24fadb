//! Laplace-approximate posterior inference for the Bernoulli-logit model
//! with a structured SPDE effect, an unstructured effect and an intercept.

pub mod empirical;
pub mod laplace;
pub mod mcmc;
pub mod model;
pub mod newton;
pub mod quadrature;

pub use empirical::{
    default_start, fit_empirical_bayes, fit_empirical_bayes_on, nelder_mead, EbOptions, SearchBox,
};
pub use laplace::{
    fit_fixed, laplace_log_evidence, laplace_marginals, log_marginal, FitDiagnostics, FitOptions,
    LaplaceFit, LatticeProblem, MeanCorrection, DEFAULT_LAPLACE_SAMPLES,
};
pub use mcmc::{mcmc_oracle, McmcResult};
pub use model::{
    neg_log_joint, sigmoid, Hyperparams, LatentState, LogGamma, Model, PriorSpec, Structure,
};
pub use newton::{newton, newton_map, NewtonOptions, NewtonOutcome};
pub use quadrature::{posterior_p_means, GaussHermite, PosteriorP};
