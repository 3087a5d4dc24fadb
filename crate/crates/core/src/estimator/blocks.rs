//! Square/border decomposition of the lattice and the block moment
//! diagnostics computed over replicated posterior-mean fields.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_RHO_STAR: usize = 2;

/// Squares of side `2φ+1` tiled from the top-left with period
/// `2φ+1+ρ*`. Each square owns the `ρ*`-wide strip to its right, the strip
/// below it and the corner between them as its border.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockPartition {
    pub n1: usize,
    pub n2: usize,
    pub phi: usize,
    pub rho_star: usize,
    pub squares: Vec<Vec<usize>>,
    pub borders_per_square: Vec<Vec<usize>>,
    /// Border cut by the lattice edge.
    pub clipped: Vec<bool>,
    pub n_sq: usize,
}

impl BlockPartition {
    pub fn side(&self) -> usize {
        2 * self.phi + 1
    }

    pub fn period(&self) -> usize {
        self.side() + self.rho_star
    }

    /// Size of an unclipped border.
    pub fn full_border_size(&self) -> usize {
        2 * self.side() * self.rho_star + self.rho_star * self.rho_star
    }

    /// Pixels in neither a square nor a border.
    pub fn slack(&self) -> usize {
        let used: usize = self.squares.iter().map(Vec::len).sum::<usize>()
            + self.borders_per_square.iter().map(Vec::len).sum::<usize>();
        self.n1 * self.n2 - used
    }

    pub fn eligible(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.n_sq).filter(|&k| !self.clipped[k])
    }
}

fn check_phi(phi: usize, rho_star: usize) -> Result<()> {
    if rho_star < 1 || phi <= rho_star {
        return Err(Error::InvalidArgument(format!(
            "block partition needs phi > rho_star >= 1, got phi={phi}, rho_star={rho_star}"
        )));
    }
    Ok(())
}

fn squares_per_axis(n: usize, phi: usize, rho_star: usize) -> usize {
    (n + rho_star) / (2 * phi + 1 + rho_star)
}

pub fn block_partition(
    n1: usize,
    n2: usize,
    phi: usize,
    rho_star: usize,
) -> Result<BlockPartition> {
    check_phi(phi, rho_star)?;
    let w = 2 * phi + 1;
    if n1 < w || n2 < w {
        return Err(Error::InvalidArgument(format!(
            "lattice {n1}x{n2} is too small for squares of side {w}"
        )));
    }
    Ok(tile(n1, n2, phi, rho_star))
}

/// The tiling itself, without the `φ > ρ*` requirement.
fn tile(n1: usize, n2: usize, phi: usize, rho_star: usize) -> BlockPartition {
    let w = 2 * phi + 1;
    let p = w + rho_star;
    let (a, b) = (
        squares_per_axis(n1, phi, rho_star),
        squares_per_axis(n2, phi, rho_star),
    );
    let mut squares = Vec::with_capacity(a * b);
    let mut borders = Vec::with_capacity(a * b);
    let mut clipped = Vec::with_capacity(a * b);
    for sr in 0..a {
        for sc in 0..b {
            let (r0, c0) = (sr * p, sc * p);
            let mut sq = Vec::with_capacity(w * w);
            for r in r0..r0 + w {
                sq.extend((c0..c0 + w).map(|c| r * n2 + c));
            }
            let mut border = Vec::new();
            let mut cut = false;
            for r in r0..r0 + p {
                for c in c0..c0 + p {
                    if r < r0 + w && c < c0 + w {
                        continue;
                    }
                    if r < n1 && c < n2 {
                        border.push(r * n2 + c);
                    } else {
                        cut = true;
                    }
                }
            }
            squares.push(sq);
            borders.push(border);
            clipped.push(cut);
        }
    }
    BlockPartition {
        n1,
        n2,
        phi,
        rho_star,
        n_sq: a * b,
        squares,
        borders_per_square: borders,
        clipped,
    }
}

/// Fixed point of `φ = ⌊n_sq(φ)^{1/8}⌋ + 2`, kept above `ρ*`.
pub fn default_phi(n1: usize, n2: usize, rho_star: usize) -> usize {
    let floor = rho_star + 1;
    let mut phi = floor;
    for _ in 0..32 {
        let nsq = squares_per_axis(n1, phi, rho_star) * squares_per_axis(n2, phi, rho_star);
        let next = ((nsq as f64).powf(0.125).floor() as usize + 2).max(floor);
        if next == phi {
            break;
        }
        phi = next;
    }
    phi
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockStats {
    pub phi: usize,
    pub rho_star: usize,
    pub n_sq: usize,
    /// Squares entering the ratios (unclipped).
    pub n_eligible: usize,
    /// `S_k` per replicate (rows) and square (columns), centred.
    pub s_k: Vec<Vec<f64>>,
    pub s_k_border: Vec<Vec<f64>>,
    pub sigma2_k: Vec<f64>,
    pub border_var_k: Vec<f64>,
    pub r3_k: Vec<f64>,
    pub clipped: Vec<bool>,
    pub degenerate: Vec<bool>,
    pub ratio_b1: Option<f64>,
    pub ratio_b2: Option<f64>,
}

/// Moments of centred square and border sums across `R` replicated fields.
pub fn block_stats(partition: &BlockPartition, fields: &[Vec<f64>]) -> Result<BlockStats> {
    let r = fields.len();
    if r < 2 {
        return Err(Error::InvalidArgument(format!(
            "block statistics need at least 2 replicates, got {r}"
        )));
    }
    let n = partition.n1 * partition.n2;
    if let Some(bad) = fields.iter().find(|f| f.len() != n) {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: bad.len(),
        });
    }
    let mean: Vec<f64> = (0..n)
        .map(|i| fields.iter().map(|f| f[i]).sum::<f64>() / r as f64)
        .collect();
    let centred_sum = |f: &[f64], idx: &[usize]| idx.iter().map(|&i| f[i] - mean[i]).sum::<f64>();
    let k = partition.n_sq;
    let s_k: Vec<Vec<f64>> = fields
        .iter()
        .map(|f| {
            partition
                .squares
                .iter()
                .map(|sq| centred_sum(f, sq))
                .collect()
        })
        .collect();
    let s_kb: Vec<Vec<f64>> = fields
        .iter()
        .map(|f| {
            partition
                .borders_per_square
                .iter()
                .map(|b| centred_sum(f, b))
                .collect()
        })
        .collect();
    let denom = (r - 1) as f64;
    let sigma2_k: Vec<f64> = (0..k)
        .map(|j| s_k.iter().map(|s| s[j] * s[j]).sum::<f64>() / denom)
        .collect();
    let border_var_k: Vec<f64> = (0..k)
        .map(|j| s_kb.iter().map(|s| s[j] * s[j]).sum::<f64>() / denom)
        .collect();
    let r3_k: Vec<f64> = (0..k)
        .map(|j| s_k.iter().map(|s| s[j].abs().powi(3)).sum::<f64>() / r as f64)
        .collect();
    let degenerate: Vec<bool> = sigma2_k.iter().map(|&v| !(v > 0.0)).collect();

    let elig: Vec<usize> = partition.eligible().collect();
    let sum_sigma2: f64 = elig.iter().map(|&j| sigma2_k[j]).sum();
    let sum_border: f64 = elig.iter().map(|&j| border_var_k[j]).sum();
    let sum_r3: f64 = elig.iter().map(|&j| r3_k[j]).sum();
    let (ratio_b1, ratio_b2) = if !elig.is_empty() && sum_sigma2 > 0.0 {
        (
            Some(sum_border / (elig.len() as f64 * sum_sigma2)),
            Some(sum_r3.cbrt() / sum_sigma2.sqrt()),
        )
    } else {
        (None, None)
    };
    Ok(BlockStats {
        phi: partition.phi,
        rho_star: partition.rho_star,
        n_sq: k,
        n_eligible: elig.len(),
        s_k,
        s_k_border: s_kb,
        sigma2_k,
        border_var_k,
        r3_k,
        clipped: partition.clipped.clone(),
        degenerate,
        ratio_b1,
        ratio_b2,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use proptest::prelude::*;
    use rand::RngExt;

    #[test]
    fn twelve_by_twelve() {
        let p = tile(12, 12, 2, 2);
        assert_eq!(p.period(), 7);
        assert_eq!(p.n_sq, 4);
        assert_eq!(p.full_border_size(), 24);
        assert_eq!(p.borders_per_square[0].len(), 24);
        assert!(!p.clipped[0]);
        // Second column of squares has its right strip cut by the edge.
        assert!(p.clipped[1]);
    }

    #[test]
    fn preconditions() {
        assert!(block_partition(12, 12, 3, 2).is_ok());
        assert!(block_partition(12, 12, 2, 2).is_err());
        assert!(block_partition(12, 12, 2, 0).is_err());
        assert!(block_partition(4, 12, 2, 1).is_err());
    }

    #[test]
    fn default_schedule() {
        assert_eq!(default_phi(32, 32, 2), 3);
        assert_eq!(default_phi(64, 64, 2), 3);
        assert_eq!(default_phi(128, 128, 2), 3);
        let phi = default_phi(1024, 1024, 2);
        assert!(phi > 3);
    }

    #[test]
    fn constant_fields_are_degenerate() {
        let p = block_partition(16, 16, 3, 2).unwrap();
        let f = vec![vec![0.4; 256]; 5];
        let s = block_stats(&p, &f).unwrap();
        assert!(s.degenerate.iter().all(|&d| d));
        assert!(s.s_k.iter().flatten().all(|&v| v == 0.0));
        assert!(s.ratio_b1.is_none());
        assert!(block_stats(&p, &f[..1]).is_err());
    }

    #[test]
    fn independent_pixels_oracle() {
        let (n, phi) = (40, 3);
        let p = block_partition(n, n, phi, 2).unwrap();
        let mut rng = seeded(8);
        let r = 4000;
        let f: Vec<Vec<f64>> = (0..r)
            .map(|_| (0..n * n).map(|_| rng.random::<f64>()).collect())
            .collect();
        let s = block_stats(&p, &f).unwrap();
        let total: f64 = s.sigma2_k.iter().sum();
        let expect = p.n_sq as f64 * ((2 * phi + 1) * (2 * phi + 1)) as f64 / 12.0;
        assert!((total / expect - 1.0).abs() < 0.1, "{total} vs {expect}");
        assert!(s.r3_k.iter().all(|&v| v >= 0.0));
    }

    proptest! {
        #[test]
        fn partition_invariants(n1 in 7usize..70, n2 in 7usize..70, rho in 1usize..4, extra in 1usize..5) {
            let phi = rho + extra;
            prop_assume!(n1 > 2 * phi && n2 > 2 * phi);
            let p = block_partition(n1, n2, phi, rho).unwrap();
            let per = 2 * phi + 1 + rho;
            prop_assert_eq!(p.n_sq, ((n1 + rho) / per) * ((n2 + rho) / per));
            prop_assert!(p.n_sq >= 1);
            let mut owner = vec![usize::MAX; n1 * n2];
            for (k, sq) in p.squares.iter().enumerate() {
                prop_assert_eq!(sq.len(), (2 * phi + 1) * (2 * phi + 1));
                for &i in sq {
                    prop_assert_eq!(owner[i], usize::MAX);
                    owner[i] = k;
                }
            }
            for (k, b) in p.borders_per_square.iter().enumerate() {
                if p.clipped[k] {
                    prop_assert!(b.len() < p.full_border_size());
                } else {
                    prop_assert_eq!(b.len(), p.full_border_size());
                }
                for &i in b {
                    prop_assert_eq!(owner[i], usize::MAX);
                    owner[i] = usize::MAX - 1 - k;
                }
            }
            // Pixels of distinct squares are more than ρ* apart in L∞:
            // compare bounding boxes, which are exact for square blocks.
            let boxes: Vec<(usize, usize, usize, usize)> = p.squares.iter().map(|sq| {
                let rows = sq.iter().map(|&i| i / n2);
                let cols = sq.iter().map(|&i| i % n2);
                (rows.clone().min().unwrap(), rows.max().unwrap(), cols.clone().min().unwrap(), cols.max().unwrap())
            }).collect();
            let gap = |a0: usize, a1: usize, b0: usize, b1: usize| b0.saturating_sub(a1).max(a0.saturating_sub(b1));
            for (k, x) in boxes.iter().enumerate() {
                prop_assert_eq!(x.1 - x.0, 2 * phi);
                for y in &boxes[k + 1..] {
                    let d = gap(x.0, x.1, y.0, y.1).max(gap(x.2, x.3, y.2, y.3));
                    prop_assert!(d > rho);
                }
            }
            prop_assert_eq!(p.slack(), owner.iter().filter(|&&o| o == usize::MAX).count());
        }
    }
}
