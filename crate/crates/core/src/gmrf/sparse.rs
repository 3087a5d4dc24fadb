use std::fmt::Write as _;

use crate::error::{Error, Result};

/// Symmetric sparse matrix in compressed-row layout storing both triangles.
///
/// Column indices are sorted within every row and explicit zeros are dropped.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseSymMatrix {
    n: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl SparseSymMatrix {
    /// Assembles from `(row, col, value)` triplets, summing duplicates.
    ///
    /// Each off-diagonal entry must be supplied for both `(i, j)` and `(j, i)`.
    pub fn from_triplets(n: usize, triplets: &[(usize, usize, f64)]) -> Result<Self> {
        let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
        for &(i, j, v) in triplets {
            if i >= n || j >= n {
                return Err(Error::InvalidArgument(format!(
                    "entry ({i}, {j}) outside a {n}x{n} matrix"
                )));
            }
            if !v.is_finite() {
                return Err(Error::InvalidArgument(format!(
                    "non-finite entry at ({i}, {j})"
                )));
            }
            rows[i].push((j, v));
        }
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        row_ptr.push(0);
        for mut row in rows {
            row.sort_by_key(|&(j, _)| j);
            let mut k = 0;
            while k < row.len() {
                let j = row[k].0;
                let mut v = 0.0;
                while k < row.len() && row[k].0 == j {
                    v += row[k].1;
                    k += 1;
                }
                if v != 0.0 {
                    col_idx.push(j);
                    values.push(v);
                }
            }
            row_ptr.push(col_idx.len());
        }
        let m = Self {
            n,
            row_ptr,
            col_idx,
            values,
        };
        m.check_symmetric()?;
        Ok(m)
    }

    /// Builds directly from CSR arrays that the caller guarantees are sorted
    /// and symmetric. Checked in debug builds.
    pub(crate) fn from_csr_unchecked(
        n: usize,
        row_ptr: Vec<usize>,
        col_idx: Vec<usize>,
        values: Vec<f64>,
    ) -> Self {
        let m = Self {
            n,
            row_ptr,
            col_idx,
            values,
        };
        debug_assert!(m.check_symmetric().is_ok());
        m
    }

    pub fn identity(n: usize) -> Self {
        Self::diagonal(&vec![1.0; n]).expect("identity is valid")
    }

    pub fn diagonal(d: &[f64]) -> Result<Self> {
        let trips: Vec<_> = d.iter().enumerate().map(|(i, &v)| (i, i, v)).collect();
        Self::from_triplets(d.len(), &trips)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row_ptr(&self) -> &[usize] {
        &self.row_ptr
    }

    pub fn col_idx(&self) -> &[usize] {
        &self.col_idx
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        (&self.col_idx[r.clone()], &self.values[r])
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (cols, vals) = self.row(i);
        cols.binary_search(&j).map_or(0.0, |k| vals[k])
    }

    pub fn diag(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.get(i, i)).collect()
    }

    /// Same sparsity pattern (ignores values).
    pub fn same_pattern(&self, other: &Self) -> bool {
        self.n == other.n && self.row_ptr == other.row_ptr && self.col_idx == other.col_idx
    }

    pub fn scaled(&self, factor: f64) -> Self {
        let mut out = self.clone();
        out.values.iter_mut().for_each(|v| *v *= factor);
        out
    }

    pub fn mul_vec(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.n {
            return Err(Error::DimensionMismatch {
                expected: self.n,
                got: x.len(),
            });
        }
        Ok((0..self.n)
            .map(|i| {
                let (cols, vals) = self.row(i);
                cols.iter().zip(vals).map(|(&j, &v)| v * x[j]).sum()
            })
            .collect())
    }

    /// `x' A x`.
    pub fn quad_form(&self, x: &[f64]) -> Result<f64> {
        let ax = self.mul_vec(x)?;
        Ok(ax.iter().zip(x).map(|(a, b)| a * b).sum())
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut d = vec![vec![0.0; self.n]; self.n];
        for (i, row) in d.iter_mut().enumerate() {
            let (cols, vals) = self.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                row[j] = v;
            }
        }
        d
    }

    fn check_symmetric(&self) -> Result<()> {
        for i in 0..self.n {
            let (cols, vals) = self.row(i);
            for w in cols.windows(2) {
                if w[0] >= w[1] {
                    return Err(Error::InvalidArgument(format!("row {i} is not sorted")));
                }
            }
            for (&j, &v) in cols.iter().zip(vals) {
                let (tc, tv) = self.row(j);
                match tc.binary_search(&i) {
                    Ok(k) if tv[k] == v => {}
                    _ => {
                        return Err(Error::InvalidArgument(format!(
                            "matrix is not symmetric at ({i}, {j})"
                        )))
                    }
                }
            }
        }
        Ok(())
    }

    /// Coordinate text: a `# n nnz` header, then `i j value` per stored entry.
    pub fn to_coordinate_text(&self) -> String {
        let mut out = format!("# {} {}\n", self.n, self.nnz());
        for i in 0..self.n {
            let (cols, vals) = self.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                let _ = writeln!(out, "{i} {j} {v}");
            }
        }
        out
    }

    pub fn from_coordinate_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines
            .next()
            .ok_or_else(|| Error::Parse("empty coordinate file".into()))?;
        let dims: Vec<usize> = header
            .trim_start_matches('#')
            .split_whitespace()
            .map(|t| {
                t.parse()
                    .map_err(|_| Error::Parse(format!("bad header `{header}`")))
            })
            .collect::<Result<_>>()?;
        let [n, nnz] = dims[..] else {
            return Err(Error::Parse(format!("bad header `{header}`")));
        };
        let mut trips = Vec::with_capacity(nnz);
        for line in lines {
            let parts: Vec<&str> = line.split_whitespace().collect();
            let parsed = match parts[..] {
                [i, j, v] => (i.parse(), j.parse(), v.parse()),
                _ => return Err(Error::Parse(format!("bad entry line `{line}`"))),
            };
            match parsed {
                (Ok(i), Ok(j), Ok(v)) => trips.push((i, j, v)),
                _ => return Err(Error::Parse(format!("bad entry line `{line}`"))),
            }
        }
        if trips.len() != nnz {
            return Err(Error::Parse(format!(
                "header declares {nnz} entries, found {}",
                trips.len()
            )));
        }
        Self::from_triplets(n, &trips)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn triplets_sum_and_drop_zeros() {
        let m = SparseSymMatrix::from_triplets(
            2,
            &[
                (0, 0, 1.0),
                (0, 0, 1.0),
                (0, 1, 0.5),
                (1, 0, 0.5),
                (1, 1, 0.0),
            ],
        )
        .unwrap();
        assert_eq!(m.nnz(), 3);
        assert_eq!(m.get(0, 0), 2.0);
        assert_eq!(m.get(1, 1), 0.0);
    }

    #[test]
    fn asymmetric_rejected() {
        assert!(SparseSymMatrix::from_triplets(2, &[(0, 1, 1.0)]).is_err());
        assert!(SparseSymMatrix::from_triplets(2, &[(0, 1, 1.0), (1, 0, 2.0)]).is_err());
        assert!(SparseSymMatrix::from_triplets(2, &[(0, 2, 1.0)]).is_err());
    }

    #[test]
    fn coordinate_round_trip() {
        let m = SparseSymMatrix::from_triplets(
            3,
            &[
                (0, 0, 4.0),
                (1, 1, 3.25),
                (2, 2, 1.0),
                (0, 2, -0.1),
                (2, 0, -0.1),
            ],
        )
        .unwrap();
        let text = m.to_coordinate_text();
        assert!(text.starts_with("# 3 5\n"));
        assert_eq!(SparseSymMatrix::from_coordinate_text(&text).unwrap(), m);
        assert!(SparseSymMatrix::from_coordinate_text("# 3 2\n0 0 1\n").is_err());
    }

    #[test]
    fn mat_vec() {
        let m =
            SparseSymMatrix::from_triplets(2, &[(0, 0, 2.0), (0, 1, 1.0), (1, 0, 1.0)]).unwrap();
        assert_eq!(m.mul_vec(&[1.0, 2.0]).unwrap(), vec![4.0, 1.0]);
        assert!(m.mul_vec(&[1.0]).is_err());
        assert_eq!(m.quad_form(&[1.0, 2.0]).unwrap(), 6.0);
    }
}
