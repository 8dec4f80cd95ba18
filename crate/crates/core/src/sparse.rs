//! Sparse symmetric positive definite matrices in compressed sparse row form.

use crate::block::BlockVector;
use crate::dense::SmallBlock;
use crate::error::{Error, Result};

/// Symmetric positive definite sparse matrix, full (expanded) CSR storage.
///
/// Invariants enforced at construction: column indices strictly increasing
/// within each row, structural symmetry, and a present, positive diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseSpd {
    n: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl SparseSpd {
    /// Assemble from (row, col, value) triplets; duplicates are summed.
    /// The triplets must describe the full (both triangles) matrix.
    pub fn from_triplets(n: usize, triplets: &[(usize, usize, f64)]) -> Result<Self> {
        assert!(n > 0, "order must be positive");
        let mut per_row: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
        for &(i, j, v) in triplets {
            if i >= n || j >= n {
                return Err(Error::DimensionMismatch(format!(
                    "entry ({i},{j}) outside order {n}"
                )));
            }
            per_row[i].push((j, v));
        }
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        row_ptr.push(0);
        for row in &mut per_row {
            row.sort_by_key(|e| e.0);
            let mut last: Option<usize> = None;
            for &(j, v) in row.iter() {
                if last == Some(j) {
                    *values.last_mut().unwrap() += v;
                } else {
                    col_idx.push(j);
                    values.push(v);
                    last = Some(j);
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
        m.validate()?;
        Ok(m)
    }

    fn validate(&self) -> Result<()> {
        // diagonal present and positive
        for i in 0..self.n {
            match self.get(i, i) {
                Some(d) if d > 0.0 => {}
                _ => return Err(Error::NotPositiveDefinite(i)),
            }
        }
        // structural symmetry
        for i in 0..self.n {
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                let j = self.col_idx[k];
                if self.get(j, i).is_none() {
                    return Err(Error::NotSymmetric);
                }
            }
        }
        Ok(())
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// Stored entry at (i, j), if any.
    pub fn get(&self, i: usize, j: usize) -> Option<f64> {
        let lo = self.row_ptr[i];
        let hi = self.row_ptr[i + 1];
        self.col_idx[lo..hi]
            .binary_search(&j)
            .ok()
            .map(|k| self.values[lo + k])
    }

    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let lo = self.row_ptr[i];
        let hi = self.row_ptr[i + 1];
        (&self.col_idx[lo..hi], &self.values[lo..hi])
    }

    /// Largest off-diagonal value asymmetry |a_ij - a_ji|, for symmetry checks.
    pub fn max_asymmetry(&self) -> f64 {
        let mut worst = 0.0f64;
        for i in 0..self.n {
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                let j = self.col_idx[k];
                if j <= i {
                    continue;
                }
                let v = self.values[k];
                let w = self.get(j, i).unwrap_or(0.0);
                worst = worst.max((v - w).abs());
            }
        }
        worst
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    /// A * X, row-by-row in index-increasing order. Deterministic: two
    /// invocations on the same inputs produce bit-identical results.
    pub fn spmm(&self, x: &BlockVector) -> Result<BlockVector> {
        if x.n() != self.n {
            return Err(Error::DimensionMismatch(format!(
                "matrix order {} vs block vector rows {}",
                self.n,
                x.n()
            )));
        }
        let m = x.m();
        let mut out = BlockVector::zeros(self.n, m);
        for i in 0..self.n {
            let (cols, vals) = self.row(i);
            for c in 0..m {
                let mut acc = 0.0;
                for (&j, &v) in cols.iter().zip(vals) {
                    acc += v * x.get(j, c);
                }
                out.set(i, c, acc);
            }
        }
        Ok(out)
    }

    /// Dense expansion, verification scale only.
    pub fn to_dense(&self) -> SmallBlock {
        let mut d = SmallBlock::zeros(self.n, self.n);
        for i in 0..self.n {
            let (cols, vals) = self.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                d.set(i, j, v);
            }
        }
        d
    }

    /// Build from a dense symmetric matrix, keeping exact nonzeros.
    pub fn from_dense(d: &SmallBlock) -> Result<Self> {
        let n = d.rows();
        let mut triplets = Vec::new();
        for i in 0..n {
            for j in 0..n {
                let v = d.get(i, j);
                if v != 0.0 || i == j {
                    triplets.push((i, j, v));
                }
            }
        }
        Self::from_triplets(n, &triplets)
    }

    pub fn identity(n: usize) -> Self {
        let triplets: Vec<_> = (0..n).map(|i| (i, i, 1.0)).collect();
        Self::from_triplets(n, &triplets).expect("identity is valid")
    }

    pub fn diagonal(values: &[f64]) -> Result<Self> {
        let triplets: Vec<_> = values.iter().enumerate().map(|(i, &v)| (i, i, v)).collect();
        Self::from_triplets(values.len(), &triplets)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_spmm_is_identity() {
        let a = SparseSpd::identity(4);
        let x = BlockVector::from_fn(4, 2, |i, j| (i * 2 + j) as f64 + 0.5);
        let y = a.spmm(&x).unwrap();
        assert_eq!(x, y);
    }

    #[test]
    fn diagonal_spmm_scales_rows() {
        let a = SparseSpd::diagonal(&[1.0, 2.0, 3.0]).unwrap();
        let x = BlockVector::from_fn(3, 2, |_, _| 1.0);
        let y = a.spmm(&x).unwrap();
        for j in 0..2 {
            assert_eq!(y.get(0, j), 1.0);
            assert_eq!(y.get(1, j), 2.0);
            assert_eq!(y.get(2, j), 3.0);
        }
    }

    #[test]
    fn spmm_matches_dense_expansion() {
        // 3x3 grid Poisson, X = e_1: the product equals row 1 of A.
        let a = crate::io::poisson2d(3);
        let e1 = BlockVector::from_fn(9, 1, |i, _| if i == 0 { 1.0 } else { 0.0 });
        let y = a.spmm(&e1).unwrap();
        let dense = a.to_dense();
        for i in 0..9 {
            assert_eq!(y.get(i, 0), dense.get(i, 0));
        }
    }

    #[test]
    fn spmm_is_deterministic() {
        let a = crate::io::poisson2d(5);
        let x = BlockVector::from_fn(25, 3, |i, j| ((i + 1) as f64).sin() * (j + 1) as f64);
        let y1 = a.spmm(&x).unwrap();
        let y2 = a.spmm(&x).unwrap();
        assert_eq!(y1.data(), y2.data(), "bit-identical results required");
    }

    #[test]
    fn spmm_rejects_dimension_mismatch() {
        let a = SparseSpd::identity(4);
        let x = BlockVector::zeros(5, 2);
        assert!(matches!(a.spmm(&x), Err(Error::DimensionMismatch(_))));
    }

    #[test]
    fn constructor_rejects_missing_diagonal() {
        let t = vec![(0usize, 0usize, 1.0), (1, 0, 0.5), (0, 1, 0.5)];
        assert!(matches!(
            SparseSpd::from_triplets(2, &t),
            Err(Error::NotPositiveDefinite(1))
        ));
    }

    #[test]
    fn constructor_rejects_structural_asymmetry() {
        let t = vec![(0usize, 0usize, 2.0), (1, 1, 2.0), (0, 1, 0.5)];
        assert!(matches!(
            SparseSpd::from_triplets(2, &t),
            Err(Error::NotSymmetric)
        ));
    }

    #[test]
    fn duplicates_are_summed() {
        let t = vec![
            (0usize, 0usize, 1.0),
            (0, 0, 1.5),
            (1, 1, 3.0),
            (0, 1, 0.25),
            (1, 0, 0.25),
        ];
        let a = SparseSpd::from_triplets(2, &t).unwrap();
        assert_eq!(a.get(0, 0), Some(2.5));
    }
}
