//! The sparsity estimator, its evaluation metrics and the block and
//! normality diagnostics.

pub mod blocks;
pub mod normality;
pub mod sparsity;

pub use blocks::{
    block_partition, block_stats, default_phi, BlockPartition, BlockStats, DEFAULT_RHO_STAR,
};
pub use normality::{
    dagostino_k2, normality_report, qq_points, shapiro_wilk, NormalityReport, NormalityTest,
};
pub use sparsity::{
    abs_diff_percent, compensated_sum, ensemble_variance_identity, estimate_expected_sparsity,
    mean, sample_mean_sparsity, sample_variance, standardize, SparsityEstimate,
};
