//! Sparse linear algebra and the Matérn-SPDE lattice precision.

pub mod bessel;
pub mod cholesky;
pub mod ordering;
pub mod precision;
pub mod sparse;

pub use bessel::{bessel_k, matern_correlation, matern_covariance};
pub use cholesky::{chol_factor, sample_field, CholFactor, Ordering, Symbolic};
pub use ordering::lattice_nested_dissection;
pub use precision::{build_precision, build_precision_with, Calibration, MaternParams};
pub use sparse::SparseSymMatrix;
