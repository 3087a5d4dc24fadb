//! Up-looking sparse Cholesky with a fixed symmetric permutation.
//!
//! The symbolic phase (elimination tree, column counts, value gather map) is
//! kept separate so matrices sharing one sparsity pattern, such as the
//! Newton Hessians of a single fit, are refactored without re-analysis.

use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::sparse::SparseSymMatrix;
use crate::error::{Error, Result};

/// Symmetric permutation applied before factorization.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub enum Ordering {
    /// Row-major index order.
    #[default]
    Natural,
    /// `perm[new] = old`.
    Given(Vec<usize>),
}

#[derive(Debug)]
pub struct Symbolic {
    n: usize,
    perm: Vec<usize>,
    /// Pattern of the analysed matrix, used to validate refactorization input.
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    parent: Vec<usize>,
    /// Upper triangle of the permuted matrix by column: row indices and the
    /// position of the value in the source CSR array.
    up_ptr: Vec<usize>,
    up_row: Vec<usize>,
    up_src: Vec<usize>,
    l_ptr: Vec<usize>,
}

const NONE: usize = usize::MAX;

impl Symbolic {
    pub fn analyze(a: &SparseSymMatrix, ordering: &Ordering) -> Result<Arc<Self>> {
        let n = a.n();
        let perm: Vec<usize> = match ordering {
            Ordering::Natural => (0..n).collect(),
            Ordering::Given(p) => {
                if p.len() != n {
                    return Err(Error::DimensionMismatch {
                        expected: n,
                        got: p.len(),
                    });
                }
                p.clone()
            }
        };
        let mut pinv = vec![NONE; n];
        for (new, &old) in perm.iter().enumerate() {
            if old >= n || pinv[old] != NONE {
                return Err(Error::InvalidArgument(
                    "ordering is not a permutation".into(),
                ));
            }
            pinv[old] = new;
        }

        // Column k of the permuted upper triangle is row perm[k] of A
        // restricted to entries whose permuted column is <= k.
        let mut up_ptr = Vec::with_capacity(n + 1);
        let mut up_row = Vec::new();
        let mut up_src = Vec::new();
        up_ptr.push(0);
        for k in 0..n {
            let old = perm[k];
            let start = a.row_ptr()[old];
            let mut has_diag = false;
            for (off, &j) in a.row(old).0.iter().enumerate() {
                let i = pinv[j];
                if i <= k {
                    has_diag |= i == k;
                    up_row.push(i);
                    up_src.push(start + off);
                }
            }
            if !has_diag {
                return Err(Error::NotPositiveDefinite {
                    index: old,
                    pivot: 0.0,
                });
            }
            up_ptr.push(up_row.len());
        }

        // Elimination tree with path compression.
        let mut parent = vec![NONE; n];
        let mut ancestor = vec![NONE; n];
        for k in 0..n {
            for &r in &up_row[up_ptr[k]..up_ptr[k + 1]] {
                let mut i = r;
                while i != NONE && i < k {
                    let next = ancestor[i];
                    ancestor[i] = k;
                    if next == NONE {
                        parent[i] = k;
                    }
                    i = next;
                }
            }
        }

        // Column counts by walking each row's reach.
        let mut counts = vec![1usize; n];
        let mut mark = vec![NONE; n];
        for k in 0..n {
            mark[k] = k;
            for &r in &up_row[up_ptr[k]..up_ptr[k + 1]] {
                let mut i = r;
                while i != NONE && mark[i] != k {
                    counts[i] += 1;
                    mark[i] = k;
                    i = parent[i];
                }
            }
        }
        let mut l_ptr = Vec::with_capacity(n + 1);
        l_ptr.push(0);
        for k in 0..n {
            l_ptr.push(l_ptr[k] + counts[k]);
        }

        Ok(Arc::new(Self {
            n,
            perm,
            row_ptr: a.row_ptr().to_vec(),
            col_idx: a.col_idx().to_vec(),
            parent,
            up_ptr,
            up_row,
            up_src,
            l_ptr,
        }))
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn perm(&self) -> &[usize] {
        &self.perm
    }

    pub fn nnz_l(&self) -> usize {
        self.l_ptr[self.n]
    }

    pub fn matches(&self, a: &SparseSymMatrix) -> bool {
        a.n() == self.n
            && a.row_ptr() == self.row_ptr.as_slice()
            && a.col_idx() == self.col_idx.as_slice()
    }

    /// Numeric factorization of a matrix with the analysed pattern.
    pub fn factor(self: &Arc<Self>, a: &SparseSymMatrix) -> Result<CholFactor> {
        if !self.matches(a) {
            return Err(Error::InvalidArgument(
                "matrix pattern differs from the analysed pattern".into(),
            ));
        }
        let n = self.n;
        let vals = a.values();
        let nnz = self.nnz_l();
        let mut l_row = vec![0usize; nnz];
        let mut l_val = vec![0.0f64; nnz];
        let mut next = self.l_ptr[..n].to_vec();
        let mut x = vec![0.0f64; n];
        let mut mark = vec![NONE; n];
        let mut stack = vec![0usize; n];
        let mut pattern = vec![0usize; n];

        for k in 0..n {
            // Nonzero pattern of row k of L, in topological order.
            let mut top = n;
            mark[k] = k;
            let mut diag = 0.0;
            for p in self.up_ptr[k]..self.up_ptr[k + 1] {
                let r = self.up_row[p];
                let v = vals[self.up_src[p]];
                if r == k {
                    diag += v;
                    continue;
                }
                x[r] += v;
                let mut len = 0;
                let mut i = r;
                while mark[i] != k {
                    stack[len] = i;
                    len += 1;
                    mark[i] = k;
                    i = self.parent[i];
                }
                while len > 0 {
                    len -= 1;
                    top -= 1;
                    pattern[top] = stack[len];
                }
            }
            let mut d = diag;
            for &j in &pattern[top..n] {
                let ljj = l_val[self.l_ptr[j]];
                let lkj = x[j] / ljj;
                x[j] = 0.0;
                for p in self.l_ptr[j] + 1..next[j] {
                    x[l_row[p]] -= l_val[p] * lkj;
                }
                d -= lkj * lkj;
                let p = next[j];
                next[j] += 1;
                l_row[p] = k;
                l_val[p] = lkj;
            }
            if !(d > 0.0) || !d.is_finite() {
                return Err(Error::NotPositiveDefinite {
                    index: self.perm[k],
                    pivot: d,
                });
            }
            let p = next[k];
            next[k] += 1;
            l_row[p] = k;
            l_val[p] = d.sqrt();
        }
        Ok(CholFactor {
            symbolic: Arc::clone(self),
            l_row,
            l_val,
        })
    }
}

/// `P Q P' = L L'` with `L` stored by column, diagonal first.
#[derive(Debug, Clone)]
pub struct CholFactor {
    symbolic: Arc<Symbolic>,
    l_row: Vec<usize>,
    l_val: Vec<f64>,
}

/// Analyse and factor in one step.
pub fn chol_factor(q: &SparseSymMatrix, ordering: &Ordering) -> Result<CholFactor> {
    Symbolic::analyze(q, ordering)?.factor(q)
}

impl CholFactor {
    pub fn n(&self) -> usize {
        self.symbolic.n
    }

    pub fn symbolic(&self) -> &Arc<Symbolic> {
        &self.symbolic
    }

    pub fn perm(&self) -> &[usize] {
        &self.symbolic.perm
    }

    pub fn nnz(&self) -> usize {
        self.l_val.len()
    }

    pub fn diag(&self, k: usize) -> f64 {
        self.l_val[self.symbolic.l_ptr[k]]
    }

    /// `log det Q = 2 Σ log L_kk`.
    pub fn log_det(&self) -> f64 {
        (0..self.n()).map(|k| self.diag(k).ln()).sum::<f64>() * 2.0
    }

    /// Column `j` of `L` as `(row, value)` pairs in the permuted index space.
    pub fn column(&self, j: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.symbolic.l_ptr[j]..self.symbolic.l_ptr[j + 1];
        self.l_row[r.clone()]
            .iter()
            .copied()
            .zip(self.l_val[r].iter().copied())
    }

    /// Solves `L y = b` in place (permuted index space).
    pub fn solve_l_in_place(&self, y: &mut [f64]) {
        let lp = &self.symbolic.l_ptr;
        for j in 0..self.n() {
            let yj = y[j] / self.l_val[lp[j]];
            y[j] = yj;
            for p in lp[j] + 1..lp[j + 1] {
                y[self.l_row[p]] -= self.l_val[p] * yj;
            }
        }
    }

    /// Solves `L' y = b` in place (permuted index space).
    pub fn solve_lt_in_place(&self, y: &mut [f64]) {
        let lp = &self.symbolic.l_ptr;
        for j in (0..self.n()).rev() {
            let mut s = y[j];
            for p in lp[j] + 1..lp[j + 1] {
                s -= self.l_val[p] * y[self.l_row[p]];
            }
            y[j] = s / self.l_val[lp[j]];
        }
    }

    /// `Q^{-1} b`.
    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        let n = self.n();
        if b.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: b.len(),
            });
        }
        let perm = self.perm();
        let mut y: Vec<f64> = perm.iter().map(|&old| b[old]).collect();
        self.solve_l_in_place(&mut y);
        self.solve_lt_in_place(&mut y);
        let mut x = vec![0.0; n];
        for (k, &old) in perm.iter().enumerate() {
            x[old] = y[k];
        }
        Ok(x)
    }

    /// `P' L^{-T} z`: maps a standard-normal vector to a draw from `N(0, Q^{-1})`.
    pub fn colour_standard_normal(&self, z: &[f64]) -> Vec<f64> {
        let mut u = z.to_vec();
        self.solve_lt_in_place(&mut u);
        let mut x = vec![0.0; self.n()];
        for (k, &old) in self.perm().iter().enumerate() {
            x[old] = u[k];
        }
        x
    }

    /// One exact draw from `N(0, Q^{-1})`.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let z: Vec<f64> = (0..self.n()).map(|_| StandardNormal.sample(rng)).collect();
        self.colour_standard_normal(&z)
    }

    /// Dense `L` in the permuted index space (tests and diagnostics).
    pub fn to_dense_l(&self) -> Vec<Vec<f64>> {
        let n = self.n();
        let mut l = vec![vec![0.0; n]; n];
        for j in 0..n {
            for (i, v) in self.column(j) {
                l[i][j] = v;
            }
        }
        l
    }
}

/// Seeded draw from `N(0, Q^{-1})`.
pub fn sample_field(factor: &CholFactor, seed: u64) -> Vec<f64> {
    let mut rng = crate::rng::seeded(seed);
    factor.sample(&mut rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gmrf::ordering::lattice_nested_dissection;
    use crate::gmrf::precision::{build_precision, MaternParams};

    fn dense_chol_solve(a: &[Vec<f64>], b: &[f64]) -> Vec<f64> {
        // Gaussian elimination with partial pivoting; independent of the sparse path.
        let n = b.len();
        let mut m: Vec<Vec<f64>> = a.to_vec();
        let mut x = b.to_vec();
        for c in 0..n {
            let p = (c..n)
                .max_by(|&i, &j| m[i][c].abs().total_cmp(&m[j][c].abs()))
                .unwrap();
            m.swap(c, p);
            x.swap(c, p);
            for r in c + 1..n {
                let f = m[r][c] / m[c][c];
                if f != 0.0 {
                    for k in c..n {
                        m[r][k] -= f * m[c][k];
                    }
                    x[r] -= f * x[c];
                }
            }
        }
        for c in (0..n).rev() {
            let mut s = x[c];
            for k in c + 1..n {
                s -= m[c][k] * x[k];
            }
            x[c] = s / m[c][c];
        }
        x
    }

    #[test]
    fn identity_factor() {
        let f = chol_factor(&SparseSymMatrix::identity(5), &Ordering::Natural).unwrap();
        assert_eq!(f.log_det(), 0.0);
        assert_eq!(f.to_dense_l(), SparseSymMatrix::identity(5).to_dense());
        let b = [1.0, -2.0, 3.0, 0.5, 0.0];
        assert_eq!(f.solve(&b).unwrap(), b.to_vec());
        assert_eq!(f.solve(&[0.0; 5]).unwrap(), vec![0.0; 5]);
        assert_eq!(f.colour_standard_normal(&b), b.to_vec());
    }

    #[test]
    fn diagonal_factor() {
        let f = chol_factor(
            &SparseSymMatrix::diagonal(&[4.0, 9.0]).unwrap(),
            &Ordering::Natural,
        )
        .unwrap();
        assert_eq!(f.diag(0), 2.0);
        assert_eq!(f.diag(1), 3.0);
        assert!((f.log_det() - 36f64.ln()).abs() < 1e-14);
    }

    #[test]
    fn not_pd_reports_index() {
        let m = SparseSymMatrix::from_triplets(
            2,
            &[(0, 0, 1.0), (1, 1, 1.0), (0, 1, 2.0), (1, 0, 2.0)],
        )
        .unwrap();
        match chol_factor(&m, &Ordering::Natural) {
            Err(Error::NotPositiveDefinite { index, .. }) => assert_eq!(index, 1),
            other => panic!("expected failure, got {other:?}"),
        }
    }

    #[test]
    fn dimension_mismatch() {
        let f = chol_factor(&SparseSymMatrix::identity(3), &Ordering::Natural).unwrap();
        assert!(f.solve(&[1.0, 2.0]).is_err());
    }

    fn lattice_q(n: usize, kappa: f64) -> SparseSymMatrix {
        build_precision(&MaternParams::new(1, kappa, 1.0).unwrap(), n, n).unwrap()
    }

    #[test]
    fn reconstruction_both_orderings() {
        let q = lattice_q(16, 0.7);
        let dense = q.to_dense();
        for ordering in [
            Ordering::Natural,
            Ordering::Given(lattice_nested_dissection(16, 16, 2)),
        ] {
            let f = chol_factor(&q, &ordering).unwrap();
            let l = f.to_dense_l();
            let perm = f.perm();
            let n = q.n();
            let scale = dense.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
            let mut worst = 0.0f64;
            for i in 0..n {
                assert!(l[i][i] > 0.0);
                for j in 0..=i {
                    let llt: f64 = (0..=j).map(|k| l[i][k] * l[j][k]).sum();
                    worst = worst.max((llt - dense[perm[i]][perm[j]]).abs());
                }
            }
            assert!(worst <= 1e-8 * scale, "reconstruction error {worst}");
        }
    }

    #[test]
    fn nested_dissection_reduces_fill() {
        let q = lattice_q(32, 0.5);
        let nat = Symbolic::analyze(&q, &Ordering::Natural).unwrap();
        let nd =
            Symbolic::analyze(&q, &Ordering::Given(lattice_nested_dissection(32, 32, 2))).unwrap();
        assert!(
            nd.nnz_l() < nat.nnz_l(),
            "{} vs {}",
            nd.nnz_l(),
            nat.nnz_l()
        );
        let a = nat.factor(&q).unwrap().log_det();
        let b = nd.factor(&q).unwrap().log_det();
        assert!((a - b).abs() < 1e-9 * a.abs());
    }

    #[test]
    fn solve_matches_dense_oracle() {
        let q = lattice_q(10, 0.9);
        let mut rng = crate::rng::seeded(11);
        let b: Vec<f64> = (0..q.n())
            .map(|_| StandardNormal.sample(&mut rng))
            .collect();
        let oracle = dense_chol_solve(&q.to_dense(), &b);
        for ordering in [
            Ordering::Natural,
            Ordering::Given(lattice_nested_dissection(10, 10, 2)),
        ] {
            let x = chol_factor(&q, &ordering).unwrap().solve(&b).unwrap();
            let diff = x
                .iter()
                .zip(&oracle)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            assert!(diff <= 1e-8, "max diff {diff}");
            let r = q.mul_vec(&x).unwrap();
            let res = r
                .iter()
                .zip(&b)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            let bn = b.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            assert!(res / bn <= 1e-8);
        }
    }

    #[test]
    fn refactor_rejects_other_pattern() {
        let sym = Symbolic::analyze(&SparseSymMatrix::identity(3), &Ordering::Natural).unwrap();
        let q = lattice_q(5, 1.0);
        assert!(sym.factor(&q).is_err());
    }

    #[test]
    fn sampling_is_deterministic() {
        let f = chol_factor(&lattice_q(7, 0.8), &Ordering::Natural).unwrap();
        assert_eq!(sample_field(&f, 3), sample_field(&f, 3));
        assert_ne!(sample_field(&f, 3), sample_field(&f, 4));
    }

    #[test]
    fn identity_sample_is_raw_normal_draw() {
        let f = chol_factor(&SparseSymMatrix::identity(6), &Ordering::Natural).unwrap();
        let mut rng = crate::rng::seeded(21);
        let z: Vec<f64> = (0..6).map(|_| StandardNormal.sample(&mut rng)).collect();
        assert_eq!(sample_field(&f, 21), z);
    }

    #[test]
    fn empirical_covariance_matches_inverse() {
        let n = 7;
        let q = lattice_q(n, 1.0);
        let f = chol_factor(&q, &Ordering::Natural).unwrap();
        let dim = n * n;
        // Dense inverse via unit-vector solves against the dense oracle.
        let dense = q.to_dense();
        let inv: Vec<Vec<f64>> = (0..dim)
            .map(|j| {
                let mut e = vec![0.0; dim];
                e[j] = 1.0;
                dense_chol_solve(&dense, &e)
            })
            .collect();
        let draws = 20_000;
        let mut rng = crate::rng::seeded(5);
        let mut acc = vec![0.0; dim * dim];
        for _ in 0..draws {
            let x = f.sample(&mut rng);
            for i in 0..dim {
                for j in 0..dim {
                    acc[i * dim + j] += x[i] * x[j];
                }
            }
        }
        let mut worst = 0.0f64;
        for i in 0..dim {
            for j in 0..dim {
                worst = worst.max((acc[i * dim + j] / draws as f64 - inv[j][i]).abs());
            }
        }
        assert!(worst <= 0.05, "worst covariance error {worst}");
    }
}
