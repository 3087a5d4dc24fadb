//! The expected-sparsity estimator and the ensemble summaries built on it.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::inference::PosteriorP;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SparsityEstimate {
    /// `Σ_i E(p_i|o)`.
    pub value: f64,
    pub n_pixels: usize,
}

/// Neumaier-compensated sum.
pub fn compensated_sum(xs: impl IntoIterator<Item = f64>) -> f64 {
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    for x in xs {
        let t = sum + x;
        if sum.abs() >= x.abs() {
            comp += (sum - t) + x;
        } else {
            comp += (x - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

pub fn estimate_expected_sparsity(p: &PosteriorP) -> SparsityEstimate {
    SparsityEstimate {
        value: compensated_sum(p.p_mean.iter().copied()),
        n_pixels: p.n(),
    }
}

/// `|a − b| · 100 / N`.
pub fn abs_diff_percent(a: f64, b: f64, n: usize) -> Result<f64> {
    if n == 0 {
        return Err(Error::InvalidArgument("pixel count must be > 0".into()));
    }
    Ok((a - b).abs() * 100.0 / n as f64)
}

pub fn sample_mean_sparsity(s: &[u64]) -> Result<f64> {
    if s.is_empty() {
        return Err(Error::InvalidArgument("no sparsities to average".into()));
    }
    Ok(compensated_sum(s.iter().map(|&v| v as f64)) / s.len() as f64)
}

pub fn mean(x: &[f64]) -> f64 {
    compensated_sum(x.iter().copied()) / x.len() as f64
}

/// Sample variance with the `n − 1` denominator.
pub fn sample_variance(x: &[f64]) -> f64 {
    let m = mean(x);
    compensated_sum(x.iter().map(|v| (v - m) * (v - m))) / (x.len() as f64 - 1.0)
}

/// `(x − mean) / sd` with the `n − 1` convention.
pub fn standardize(x: &[f64]) -> Result<Vec<f64>> {
    if x.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "standardizing needs at least 2 values, got {}",
            x.len()
        )));
    }
    let m = mean(x);
    let sd = sample_variance(x).sqrt();
    if !(sd > 0.0) {
        return Err(Error::InvalidArgument("sample has zero variance".into()));
    }
    Ok(x.iter().map(|v| (v - m) / sd).collect())
}

/// Both sides of `Var(Σ_i X_i) = Σ_i Var X_i + 2 Σ_{i<j} Cov(X_i, X_j)` on
/// an `R × N` ensemble: the left side from row sums, the right from centred
/// columns, without forming the covariance matrix.
pub fn ensemble_variance_identity(fields: &[Vec<f64>]) -> Result<(f64, f64)> {
    let r = fields.len();
    if r < 2 {
        return Err(Error::InvalidArgument(format!(
            "need at least 2 replicates, got {r}"
        )));
    }
    let n = fields[0].len();
    if let Some(bad) = fields.iter().find(|f| f.len() != n) {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: bad.len(),
        });
    }
    let row_sums: Vec<f64> = fields
        .iter()
        .map(|f| compensated_sum(f.iter().copied()))
        .collect();
    let lhs = sample_variance(&row_sums);

    let col_mean: Vec<f64> = (0..n)
        .map(|i| compensated_sum(fields.iter().map(|f| f[i])) / r as f64)
        .collect();
    let denom = (r - 1) as f64;
    let mut var_sum = 0.0;
    let mut cross = 0.0;
    for f in fields {
        let mut s = 0.0;
        let mut s2 = 0.0;
        for (v, m) in f.iter().zip(&col_mean) {
            let c = v - m;
            s += c;
            s2 += c * c;
        }
        var_sum += s2;
        // Σ_{i<j} c_i c_j for this replicate.
        cross += 0.5 * (s * s - s2);
    }
    let rhs = var_sum / denom + 2.0 * cross / denom;
    Ok((lhs, rhs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use proptest::prelude::*;
    use rand::RngExt;

    #[test]
    fn sums_and_percentages() {
        let p = PosteriorP {
            p_mean: vec![0.5; 4],
            p_var: vec![0.0; 4],
        };
        assert_eq!(estimate_expected_sparsity(&p).value, 2.0);
        assert!(
            (abs_diff_percent(4241.768, 4213.0, 16384).unwrap() - 0.17558593750000018).abs()
                < 1e-12
        );
        assert!(
            (abs_diff_percent(4241.768, 4219.289, 16384).unwrap() - 0.13720092773437664).abs()
                < 1e-12
        );
        assert_eq!(abs_diff_percent(3.0, 3.0, 9).unwrap(), 0.0);
        assert!(abs_diff_percent(1.0, 2.0, 0).is_err());
        assert_eq!(sample_mean_sparsity(&[3]).unwrap(), 3.0);
        assert_eq!(sample_mean_sparsity(&[2, 4]).unwrap(), 3.0);
        assert!(sample_mean_sparsity(&[]).is_err());
    }

    #[test]
    fn compensation_recovers_small_terms() {
        let mut v = vec![1.0; 1 << 15];
        v.push(1e-16);
        v.insert(0, 1e16);
        v.push(-1e16);
        assert_eq!(compensated_sum(v), (1u64 << 15) as f64 + 1e-16);
    }

    #[test]
    fn standardize_fixture() {
        let z = standardize(&[0.0, 2.0]).unwrap();
        assert!((z[0] + std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-15);
        assert!((z[1] - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-15);
        assert!(standardize(&[1.0, 1.0]).is_err());
        assert!(standardize(&[1.0]).is_err());
    }

    #[test]
    fn identity_hand_fixture() {
        // 3 replicates of 4 pixels; covariance matrix summed entry by entry.
        let f = vec![
            vec![1.0, 0.0, 2.0, 1.0],
            vec![0.0, 1.0, 1.0, 3.0],
            vec![2.0, 2.0, 0.0, 1.0],
        ];
        let mut brute = 0.0;
        for i in 0..4 {
            for j in 0..4 {
                let mi = f.iter().map(|r| r[i]).sum::<f64>() / 3.0;
                let mj = f.iter().map(|r| r[j]).sum::<f64>() / 3.0;
                brute += f.iter().map(|r| (r[i] - mi) * (r[j] - mj)).sum::<f64>() / 2.0;
            }
        }
        let (lhs, rhs) = ensemble_variance_identity(&f).unwrap();
        // Row sums 4, 5, 5.
        assert!((lhs - 1.0 / 3.0).abs() < 1e-14);
        assert!((rhs - brute).abs() < 1e-14);
        let single = vec![vec![1.0], vec![3.0]];
        assert_eq!(ensemble_variance_identity(&single).unwrap().1, 2.0);
        assert!(ensemble_variance_identity(&f[..1]).is_err());
    }

    #[test]
    fn identity_on_random_ensembles() {
        for seed in 0..20 {
            let mut rng = seeded(seed);
            let r = rng.random_range(2..30);
            let n = rng.random_range(1..200);
            let f: Vec<Vec<f64>> = (0..r)
                .map(|_| (0..n).map(|_| rng.random::<f64>()).collect())
                .collect();
            let (lhs, rhs) = ensemble_variance_identity(&f).unwrap();
            assert!(
                (lhs - rhs).abs() <= 1e-8 * lhs.abs().max(1e-300),
                "{lhs} vs {rhs}"
            );
        }
    }

    proptest! {
        #[test]
        fn standardize_invariances(x in prop::collection::vec(-100.0f64..100.0, 3..40), a in 0.1f64..10.0, b in -5.0f64..5.0) {
            prop_assume!(sample_variance(&x) > 1e-6);
            let z = standardize(&x).unwrap();
            prop_assert!(mean(&z).abs() < 1e-12);
            prop_assert!((sample_variance(&z) - 1.0).abs() < 1e-12);
            let zz = standardize(&z).unwrap();
            for (p, q) in z.iter().zip(&zz) {
                prop_assert!((p - q).abs() < 1e-12);
            }
            let y: Vec<f64> = x.iter().map(|v| a * v + b).collect();
            for (p, q) in z.iter().zip(&standardize(&y).unwrap()) {
                prop_assert!((p - q).abs() < 1e-9);
            }
        }
    }
}
