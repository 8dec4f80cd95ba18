//! Block vectors: tall n-by-m matrices of m column vectors.

use crate::dense::{SmallBlock, ABS_FLOOR};
use crate::error::{Error, Result};

/// Relative threshold on the diagonal of R below which a column is declared
/// dependent on the previous ones.
pub const RANK_TOL: f64 = 1e-12;

/// An n-by-m collection of column vectors, stored row-major.
///
/// The column count m is fixed for the life of a solve and m <= n.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockVector {
    n: usize,
    m: usize,
    data: Vec<f64>,
}

impl BlockVector {
    pub fn new(n: usize, m: usize, data: Vec<f64>) -> Self {
        assert!(n > 0 && m > 0, "dimensions must be positive");
        assert!(m <= n, "column count must not exceed the order");
        assert_eq!(data.len(), n * m);
        Self { n, m, data }
    }

    pub fn zeros(n: usize, m: usize) -> Self {
        Self::new(n, m, vec![0.0; n * m])
    }

    pub fn from_fn(n: usize, m: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(n * m);
        for i in 0..n {
            for j in 0..m {
                data.push(f(i, j));
            }
        }
        Self::new(n, m, data)
    }

    /// Single column as an n-by-1 block vector.
    pub fn column(&self, j: usize) -> BlockVector {
        assert!(j < self.m);
        BlockVector::from_fn(self.n, 1, |i, _| self.get(i, j))
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn m(&self) -> usize {
        self.m
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.m + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.m + j] = v;
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|a| a * a).sum::<f64>().sqrt()
    }

    pub fn add(&self, other: &Self) -> Self {
        assert_eq!((self.n, self.m), (other.n, other.m));
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a + b)
            .collect();
        Self::new(self.n, self.m, data)
    }

    pub fn sub(&self, other: &Self) -> Self {
        assert_eq!((self.n, self.m), (other.n, other.m));
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a - b)
            .collect();
        Self::new(self.n, self.m, data)
    }

    /// self^T * other, an m-by-q small block.
    pub fn gram_with(&self, other: &Self) -> SmallBlock {
        assert_eq!(self.n, other.n, "row counts must agree");
        let mut g = SmallBlock::zeros(self.m, other.m);
        for i in 0..self.n {
            let a = &self.data[i * self.m..(i + 1) * self.m];
            let b = &other.data[i * other.m..(i + 1) * other.m];
            for (r, &ar) in a.iter().enumerate() {
                if ar == 0.0 {
                    continue;
                }
                for (c, &bc) in b.iter().enumerate() {
                    g.set(r, c, g.get(r, c) + ar * bc);
                }
            }
        }
        g
    }

    /// self^T * self, exactly symmetric by construction.
    pub fn gram(&self) -> SmallBlock {
        let m = self.m;
        let mut g = SmallBlock::zeros(m, m);
        for i in 0..self.n {
            let row = &self.data[i * m..(i + 1) * m];
            for r in 0..m {
                let ar = row[r];
                if ar == 0.0 {
                    continue;
                }
                for c in r..m {
                    g.set(r, c, g.get(r, c) + ar * row[c]);
                }
            }
        }
        for r in 0..m {
            for c in (r + 1)..m {
                g.set(c, r, g.get(r, c));
            }
        }
        g
    }

    /// self * s for a small m-by-q block.
    pub fn mul_small(&self, s: &SmallBlock) -> BlockVector {
        assert_eq!(self.m, s.rows(), "inner dimensions must agree");
        let q = s.cols();
        let mut out = BlockVector::zeros(self.n, q);
        for i in 0..self.n {
            let row = &self.data[i * self.m..(i + 1) * self.m];
            let dst = &mut out.data[i * q..(i + 1) * q];
            for (k, &a) in row.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                for c in 0..q {
                    dst[c] += a * s.get(k, c);
                }
            }
        }
        out
    }

    /// self += v * s
    pub fn add_assign_mul(&mut self, v: &BlockVector, s: &SmallBlock) {
        assert_eq!(self.n, v.n);
        assert_eq!(v.m, s.rows());
        assert_eq!(self.m, s.cols());
        for i in 0..self.n {
            let row = &v.data[i * v.m..(i + 1) * v.m];
            let dst = &mut self.data[i * self.m..(i + 1) * self.m];
            for (k, &a) in row.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                for c in 0..self.m {
                    dst[c] += a * s.get(k, c);
                }
            }
        }
    }

    /// self -= v * s
    pub fn sub_assign_mul(&mut self, v: &BlockVector, s: &SmallBlock) {
        assert_eq!(self.n, v.n);
        assert_eq!(v.m, s.rows());
        assert_eq!(self.m, s.cols());
        for i in 0..self.n {
            let row = &v.data[i * v.m..(i + 1) * v.m];
            let dst = &mut self.data[i * self.m..(i + 1) * self.m];
            for (k, &a) in row.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                for c in 0..self.m {
                    dst[c] -= a * s.get(k, c);
                }
            }
        }
    }

    /// Thin Householder QR: `self = Q R` with Q n-by-m orthonormal and R
    /// m-by-m upper triangular with nonnegative diagonal.
    ///
    /// The sign convention (diagonal of R flipped nonnegative) makes the
    /// factor unique, which downstream identities rely on. Columns whose
    /// R pivot falls below `RANK_TOL * ||self||_F` raise `RankDeficient`.
    pub fn qr_thin(&self) -> Result<(BlockVector, SmallBlock)> {
        let (q, r) = self.qr_thin_unchecked();
        let scale = self.frobenius_norm().max(ABS_FLOOR);
        for j in 0..self.m {
            if r.get(j, j).abs() <= RANK_TOL * scale {
                return Err(Error::RankDeficient(j));
            }
        }
        Ok((q, r))
    }

    /// Thin QR without the rank check. Q is orthonormal regardless of the
    /// rank of the input; R may have (near-)zero diagonal entries.
    pub fn qr_thin_unchecked(&self) -> (BlockVector, SmallBlock) {
        let n = self.n;
        let m = self.m;
        let mut a = self.data.clone();
        // Householder vectors, stored per column (length n - j each).
        let mut reflectors: Vec<Vec<f64>> = Vec::with_capacity(m);

        for j in 0..m {
            let mut norm2 = 0.0;
            for i in j..n {
                let v = a[i * m + j];
                norm2 += v * v;
            }
            let norm = norm2.sqrt();
            if norm == 0.0 {
                reflectors.push(Vec::new());
                continue;
            }
            let ajj = a[j * m + j];
            let alpha = if ajj >= 0.0 { -norm } else { norm };
            let mut v: Vec<f64> = (j..n).map(|i| a[i * m + j]).collect();
            v[0] -= alpha;
            let vtv: f64 = v.iter().map(|x| x * x).sum();
            if vtv == 0.0 {
                // column already aligned with e_j
                reflectors.push(Vec::new());
                a[j * m + j] = alpha;
                continue;
            }
            for c in j..m {
                let mut dot = 0.0;
                for (k, vi) in v.iter().enumerate() {
                    dot += vi * a[(j + k) * m + c];
                }
                let f = 2.0 * dot / vtv;
                for (k, vi) in v.iter().enumerate() {
                    a[(j + k) * m + c] -= f * vi;
                }
            }
            reflectors.push(v);
        }

        let mut r = SmallBlock::zeros(m, m);
        for i in 0..m {
            for j in i..m {
                r.set(i, j, a[i * m + j]);
            }
        }

        // Accumulate Q by applying reflectors in reverse to the first m
        // columns of the identity.
        let mut q = BlockVector::zeros(n, m);
        for j in 0..m {
            q.set(j, j, 1.0);
        }
        for j in (0..m).rev() {
            let v = &reflectors[j];
            if v.is_empty() {
                continue;
            }
            let vtv: f64 = v.iter().map(|x| x * x).sum();
            for c in 0..m {
                let mut dot = 0.0;
                for (k, vi) in v.iter().enumerate() {
                    dot += vi * q.get(j + k, c);
                }
                let f = 2.0 * dot / vtv;
                for (k, vi) in v.iter().enumerate() {
                    let cur = q.get(j + k, c);
                    q.set(j + k, c, cur - f * vi);
                }
            }
        }

        // Sign convention: R_jj >= 0.
        for j in 0..m {
            if r.get(j, j) < 0.0 {
                for c in j..m {
                    r.set(j, c, -r.get(j, c));
                }
                for i in 0..n {
                    q.set(i, j, -q.get(i, j));
                }
            }
        }
        (q, r)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn splitmix(seed: u64) -> impl FnMut() -> f64 {
        let mut state = seed;
        move || {
            state = state.wrapping_add(0x9E3779B97F4A7C15);
            let mut z = state;
            z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
            z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
            z ^= z >> 31;
            (z >> 11) as f64 / 9007199254740992.0 * 2.0 - 1.0
        }
    }

    #[test]
    fn qr_identity_is_identity() {
        let eye = BlockVector::from_fn(3, 3, |i, j| if i == j { 1.0 } else { 0.0 });
        let (q, r) = eye.qr_thin().unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let e = if i == j { 1.0 } else { 0.0 };
                assert!((q.get(i, j) - e).abs() < 1e-15);
                assert!((r.get(i, j) - e).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn qr_three_four_five() {
        let v = BlockVector::new(2, 1, vec![3.0, 4.0]);
        let (q, r) = v.qr_thin().unwrap();
        assert!((q.get(0, 0) - 0.6).abs() < 1e-15);
        assert!((q.get(1, 0) - 0.8).abs() < 1e-15);
        assert!((r.get(0, 0) - 5.0).abs() < 1e-14);
    }

    #[test]
    fn qr_matches_gram_schmidt_oracle() {
        // 6x2, seed 7: compare against modified Gram-Schmidt.
        let mut rng = splitmix(7);
        let m = BlockVector::from_fn(6, 2, |_, _| rng());
        let (q, r) = m.qr_thin().unwrap();

        // modified Gram-Schmidt oracle
        let mut cols: Vec<Vec<f64>> = (0..2)
            .map(|j| (0..6).map(|i| m.get(i, j)).collect())
            .collect();
        let mut r_mgs = [[0.0f64; 2]; 2];
        for j in 0..2 {
            for k in 0..j {
                let dot: f64 = (0..6).map(|i| cols[k][i] * cols[j][i]).sum();
                r_mgs[k][j] = dot;
                for i in 0..6 {
                    cols[j][i] -= dot * cols[k][i];
                }
            }
            let norm: f64 = (0..6).map(|i| cols[j][i] * cols[j][i]).sum::<f64>().sqrt();
            r_mgs[j][j] = norm;
            for i in 0..6 {
                cols[j][i] /= norm;
            }
        }
        for j in 0..2 {
            for c in j..2 {
                assert!((r.get(j, c) - r_mgs[j][c]).abs() < 1e-12, "R mismatch");
            }
            for i in 0..6 {
                assert!((q.get(i, j) - cols[j][i]).abs() < 1e-12, "Q mismatch");
            }
        }
    }

    #[test]
    fn qr_flags_rank_deficiency_with_column_index() {
        let m = BlockVector::from_fn(4, 2, |i, j| {
            if j == 0 {
                (i + 1) as f64
            } else {
                2.0 * (i + 1) as f64
            }
        });
        match m.qr_thin() {
            Err(Error::RankDeficient(1)) => {}
            other => panic!("expected RankDeficient(1), got {other:?}"),
        }
    }

    #[test]
    fn qr_unchecked_keeps_q_orthonormal_on_rank_deficiency() {
        let m = BlockVector::from_fn(5, 3, |i, j| match j {
            0 => (i + 1) as f64,
            1 => 2.0 * (i + 1) as f64,
            _ => (i as f64).sin(),
        });
        let (q, _) = m.qr_thin_unchecked();
        let g = q.gram();
        let dev = g.sub(&SmallBlock::identity(3)).frobenius_norm();
        assert!(dev < 1e-13, "Q^T Q deviation {dev}");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(120))]

        // Orthonormality and reconstruction over seeded random matrices.
        #[test]
        fn qr_orthonormal_and_reconstructs(seed in 0u64..10_000, n in 2usize..24, mwidth in 1usize..8) {
            let m = mwidth.min(n);
            let mut rng = splitmix(seed);
            let a = BlockVector::from_fn(n, m, |_, _| rng());
            if let Ok((q, r)) = a.qr_thin() {
                let eye_dev = q.gram().sub(&SmallBlock::identity(m)).frobenius_norm();
                prop_assert!(eye_dev <= 1e-12);
                let back = q.mul_small(&r);
                let rec_dev = back.sub(&a).frobenius_norm();
                prop_assert!(rec_dev <= 1e-12 * a.frobenius_norm().max(1.0));
                for j in 0..m {
                    prop_assert!(r.get(j, j) >= 0.0);
                }
            }
        }
    }
}
