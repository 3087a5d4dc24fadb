//! Expected-sparsity estimation for 2D signals.
//!
//! The pipeline sparsifies an image with a three-level Haar transform and a
//! universal hard threshold, then fits a Bernoulli-logit hierarchical model
//! whose structured effect is a Matérn-SPDE Gaussian Markov random field.
//! The estimate of `E(s)` is the sum of posterior means of the per-pixel
//! non-zero probabilities.
//!
//! Modules:
//! - [`imagio`]: image I/O and synthetic phantoms
//! - [`wavelet`]: Haar pyramid, noise estimate, thresholding
//! - [`gmrf`]: sparse matrices, Cholesky, SPDE precision, Matérn covariance
//! - [`inference`]: Laplace approximation, empirical Bayes, MCMC check
//! - [`estimator`]: the sparsity estimator, block diagnostics, normality tests
//! - [`simharness`]: seeded replicate studies and report emission
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod cli;
pub mod error;
pub mod estimator;
pub mod gmrf;
pub mod imagio;
pub mod inference;
pub mod rng;
pub mod simharness;
pub mod wavelet;

pub use error::{Error, Result};
