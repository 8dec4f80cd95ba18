//! Dense kernels for the small coefficient blocks.
//!
//! `SmallBlock` is a plain row-major dense matrix. It hosts every m-by-m
//! coefficient block the solvers produce, and doubles as the dense scratch
//! type for verification-scale work (tridiagonal expansions, reference
//! factorizations), where it may be much larger than m-by-m.

use crate::error::{Error, Result};

/// Absolute floor used when normalizing by a matrix norm, so that relative
/// tolerances remain meaningful for zero operands.
pub const ABS_FLOOR: f64 = 1e-300;

/// Relative symmetry tolerance, scaled by the largest entry magnitude.
pub const SYM_TOL: f64 = 1e-12;

/// Dense real matrix, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SmallBlock {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl SmallBlock {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert!(rows > 0 && cols > 0, "dimensions must be positive");
        assert_eq!(data.len(), rows * cols, "entry count must be rows*cols");
        Self { rows, cols, data }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::new(rows, cols, vec![0.0; rows * cols])
    }

    pub fn identity(n: usize) -> Self {
        let mut s = Self::zeros(n, n);
        for i in 0..n {
            s.data[i * n + i] = 1.0;
        }
        s
    }

    /// Build from nested rows; convenient in tests.
    pub fn from_rows(rows: &[&[f64]]) -> Self {
        let r = rows.len();
        let c = rows[0].len();
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            assert_eq!(row.len(), c, "ragged rows");
            data.extend_from_slice(row);
        }
        Self::new(r, c, data)
    }

    pub fn scalar(v: f64) -> Self {
        Self::new(1, 1, vec![v])
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        t
    }

    pub fn mul(&self, other: &Self) -> Self {
        assert_eq!(self.cols, other.rows, "inner dimensions must agree");
        let mut out = Self::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self.data[i * self.cols + k];
                if a == 0.0 {
                    continue;
                }
                let lhs = &other.data[k * other.cols..(k + 1) * other.cols];
                let dst = &mut out.data[i * other.cols..(i + 1) * other.cols];
                for (d, &b) in dst.iter_mut().zip(lhs) {
                    *d += a * b;
                }
            }
        }
        out
    }

    pub fn add(&self, other: &Self) -> Self {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a + b)
            .collect();
        Self::new(self.rows, self.cols, data)
    }

    pub fn sub(&self, other: &Self) -> Self {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a - b)
            .collect();
        Self::new(self.rows, self.cols, data)
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self::new(
            self.rows,
            self.cols,
            self.data.iter().map(|a| a * s).collect(),
        )
    }

    /// mu * I with the dimensions of `self` (square only).
    pub fn shifted(&self, mu: f64) -> Self {
        assert!(self.is_square());
        let mut out = self.clone();
        for i in 0..self.rows {
            out.data[i * self.cols + i] -= mu;
        }
        out
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|a| a * a).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0_f64, |m, a| m.max(a.abs()))
    }

    pub fn diag(&self) -> Vec<f64> {
        (0..self.rows.min(self.cols))
            .map(|i| self.get(i, i))
            .collect()
    }

    pub fn is_symmetric(&self) -> bool {
        if !self.is_square() {
            return false;
        }
        let tol = SYM_TOL * self.max_abs().max(ABS_FLOOR);
        for i in 0..self.rows {
            for j in (i + 1)..self.cols {
                if (self.get(i, j) - self.get(j, i)).abs() > tol {
                    return false;
                }
            }
        }
        true
    }

    /// (A + A^T)/2. Coefficient blocks that are symmetric in exact arithmetic
    /// are passed through this before SPD tests.
    pub fn symmetrize(&self) -> Self {
        assert!(self.is_square());
        let n = self.rows;
        let mut out = self.clone();
        for i in 0..n {
            for j in (i + 1)..n {
                let v = 0.5 * (self.get(i, j) + self.get(j, i));
                out.set(i, j, v);
                out.set(j, i, v);
            }
        }
        out
    }

    /// Lower Cholesky factor L with `self = L L^T`.
    ///
    /// Fails with `NotSymmetric` when the input is not symmetric within
    /// `SYM_TOL`, and with `NotPositiveDefinite(j)` when pivot j is not
    /// strictly positive. The latter is the crate's SPD test.
    pub fn cholesky(&self) -> Result<Self> {
        if !self.is_symmetric() {
            return Err(Error::NotSymmetric);
        }
        let n = self.rows;
        let mut l = Self::zeros(n, n);
        for j in 0..n {
            let mut d = self.get(j, j);
            for k in 0..j {
                d -= l.get(j, k) * l.get(j, k);
            }
            if d <= 0.0 {
                return Err(Error::NotPositiveDefinite(j));
            }
            let dj = d.sqrt();
            l.set(j, j, dj);
            for i in (j + 1)..n {
                let mut v = self.get(i, j);
                for k in 0..j {
                    v -= l.get(i, k) * l.get(j, k);
                }
                l.set(i, j, v / dj);
            }
        }
        Ok(l)
    }

    /// Upper triangular U with positive diagonal and `U^T U = self`.
    ///
    /// This is the factor shared by the QR route (R factor of any M with
    /// M^T M = self) and is unique, which is what makes the coefficient
    /// bridge well defined.
    pub fn upper_cholesky(&self) -> Result<Self> {
        Ok(self.cholesky()?.transpose())
    }

    pub fn is_spd(&self) -> bool {
        self.cholesky().is_ok()
    }

    /// Squared ratio of extreme Cholesky pivots of the diagonally
    /// equilibrated block, an O(m^3) condition estimate for SPD blocks.
    /// Infinite when the factorization fails.
    ///
    /// Equilibration (S -> D^{-1/2} S D^{-1/2}, D = diag(S)) makes the
    /// estimate measure cross-column degeneracy rather than column scale
    /// spread: one solution column running ahead of the others shrinks a
    /// scale, which pivoted solves handle, while genuinely dependent columns
    /// are what breaks the block recurrences.
    pub fn spd_condition_estimate(&self) -> f64 {
        assert!(self.is_square());
        let n = self.rows;
        let mut scale = vec![0.0f64; n];
        for i in 0..n {
            let d = self.get(i, i);
            if d <= 0.0 {
                return f64::INFINITY;
            }
            scale[i] = d.sqrt();
        }
        let mut eq = self.clone();
        for i in 0..n {
            for j in 0..n {
                eq.set(i, j, self.get(i, j) / (scale[i] * scale[j]));
            }
        }
        match eq.symmetrize().cholesky() {
            Ok(l) => {
                let d = l.diag();
                let hi = d.iter().cloned().fold(0.0_f64, f64::max);
                let lo = d.iter().cloned().fold(f64::INFINITY, f64::min);
                if lo <= 0.0 {
                    f64::INFINITY
                } else {
                    (hi / lo) * (hi / lo)
                }
            }
            Err(_) => f64::INFINITY,
        }
    }

    /// Solve `self * X = rhs` by LU with partial pivoting.
    ///
    /// A pivot of magnitude at most `1e-14 * ||self||_F` is reported as
    /// `Singular`. Inverses are never formed elsewhere in the crate; every
    /// inverse-times-matrix product goes through this.
    pub fn solve(&self, rhs: &Self) -> Result<Self> {
        assert!(self.is_square(), "coefficient matrix must be square");
        assert_eq!(self.rows, rhs.rows, "rhs row count must match");
        let n = self.rows;
        let q = rhs.cols;
        let pivot_tol = 1e-14 * self.frobenius_norm().max(ABS_FLOOR);

        let mut lu = self.data.clone();
        let mut x = rhs.data.clone();
        for col in 0..n {
            // partial pivoting
            let mut p = col;
            let mut best = lu[col * n + col].abs();
            for r in (col + 1)..n {
                let v = lu[r * n + col].abs();
                if v > best {
                    best = v;
                    p = r;
                }
            }
            if best <= pivot_tol {
                return Err(Error::Singular);
            }
            if p != col {
                for j in 0..n {
                    lu.swap(col * n + j, p * n + j);
                }
                for j in 0..q {
                    x.swap(col * q + j, p * q + j);
                }
            }
            let d = lu[col * n + col];
            for r in (col + 1)..n {
                let f = lu[r * n + col] / d;
                if f == 0.0 {
                    continue;
                }
                lu[r * n + col] = f;
                for j in (col + 1)..n {
                    lu[r * n + j] -= f * lu[col * n + j];
                }
                for j in 0..q {
                    x[r * q + j] -= f * x[col * q + j];
                }
            }
        }
        // back substitution
        for col in (0..n).rev() {
            let d = lu[col * n + col];
            for j in 0..q {
                x[col * q + j] /= d;
            }
            for r in 0..col {
                let f = lu[r * n + col];
                if f == 0.0 {
                    continue;
                }
                for j in 0..q {
                    x[r * q + j] -= f * x[col * q + j];
                }
            }
        }
        Ok(Self::new(n, q, x))
    }
}

/// Convenience free function mirroring the solver pseudocode: `S^{-1} RHS`.
pub fn solve_small(s: &SmallBlock, rhs: &SmallBlock) -> Result<SmallBlock> {
    s.solve(rhs)
}

const JACOBI_MAX_SWEEPS: usize = 100;
const JACOBI_DENSE_LIMIT: usize = 2000;

/// Eigendecomposition of a dense symmetric matrix by cyclic Jacobi sweeps.
///
/// Returns eigenvalues in ascending order with the matching orthonormal
/// eigenvectors as the columns of the returned matrix. Verification-scale
/// only (`p <= 2000`); sweeps run until the off-diagonal Frobenius norm
/// drops below `1e-12 * ||S||_F`.
pub fn jacobi_eigen(s: &SmallBlock) -> Result<(Vec<f64>, SmallBlock)> {
    if !s.is_square() {
        return Err(Error::NonSquare {
            rows: s.rows(),
            cols: s.cols(),
        });
    }
    if s.rows() > JACOBI_DENSE_LIMIT {
        return Err(Error::TooLarge {
            n: s.rows(),
            limit: JACOBI_DENSE_LIMIT,
        });
    }
    if !s.is_symmetric() {
        return Err(Error::NotSymmetric);
    }
    let n = s.rows();
    let mut a = s.clone();
    let mut v = SmallBlock::identity(n);
    let target = 1e-12 * s.frobenius_norm().max(ABS_FLOOR);

    for _ in 0..JACOBI_MAX_SWEEPS {
        let mut off = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                off += 2.0 * a.get(i, j) * a.get(i, j);
            }
        }
        if off.sqrt() <= target {
            let mut pairs: Vec<(f64, usize)> = (0..n).map(|i| (a.get(i, i), i)).collect();
            pairs.sort_by(|x, y| x.0.total_cmp(&y.0));
            let eigenvalues: Vec<f64> = pairs.iter().map(|p| p.0).collect();
            let mut vectors = SmallBlock::zeros(n, n);
            for (dst, &(_, src)) in pairs.iter().enumerate() {
                for r in 0..n {
                    vectors.set(r, dst, v.get(r, src));
                }
            }
            return Ok((eigenvalues, vectors));
        }
        for p in 0..(n - 1) {
            for q in (p + 1)..n {
                let apq = a.get(p, q);
                if apq == 0.0 {
                    continue;
                }
                let theta = 0.5 * (a.get(q, q) - a.get(p, p)) / apq;
                let t = if theta >= 0.0 {
                    1.0 / (theta + (1.0 + theta * theta).sqrt())
                } else {
                    -1.0 / (-theta + (1.0 + theta * theta).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let sn = t * c;
                // rotate rows/columns p and q
                for k in 0..n {
                    let akp = a.get(k, p);
                    let akq = a.get(k, q);
                    a.set(k, p, c * akp - sn * akq);
                    a.set(k, q, sn * akp + c * akq);
                }
                for k in 0..n {
                    let apk = a.get(p, k);
                    let aqk = a.get(q, k);
                    a.set(p, k, c * apk - sn * aqk);
                    a.set(q, k, sn * apk + c * aqk);
                }
                for k in 0..n {
                    let vkp = v.get(k, p);
                    let vkq = v.get(k, q);
                    v.set(k, p, c * vkp - sn * vkq);
                    v.set(k, q, sn * vkp + c * vkq);
                }
            }
        }
    }
    Err(Error::NoConvergence(JACOBI_MAX_SWEEPS))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn assert_close(a: f64, b: f64, tol: f64) {
        assert!((a - b).abs() <= tol, "{a} vs {b}");
    }

    #[test]
    fn cholesky_scalar() {
        let l = SmallBlock::scalar(4.0).cholesky().unwrap();
        assert_close(l.get(0, 0), 2.0, 1e-15);
    }

    #[test]
    fn cholesky_two_by_two() {
        let s = SmallBlock::from_rows(&[&[4.0, 2.0], &[2.0, 5.0]]);
        let l = s.cholesky().unwrap();
        assert_close(l.get(0, 0), 2.0, 1e-15);
        assert_close(l.get(1, 0), 1.0, 1e-15);
        assert_close(l.get(1, 1), 2.0, 1e-15);
        assert_close(l.get(0, 1), 0.0, 0.0);
    }

    #[test]
    fn cholesky_rejects_indefinite() {
        let s = SmallBlock::from_rows(&[&[1.0, 2.0], &[2.0, 1.0]]);
        match s.cholesky() {
            Err(Error::NotPositiveDefinite(1)) => {}
            other => panic!("expected NotPositiveDefinite(1), got {other:?}"),
        }
    }

    #[test]
    fn cholesky_rejects_asymmetric() {
        let s = SmallBlock::from_rows(&[&[1.0, 2.0], &[0.0, 1.0]]);
        assert!(matches!(s.cholesky(), Err(Error::NotSymmetric)));
    }

    #[test]
    fn upper_cholesky_reconstructs() {
        let s = SmallBlock::from_rows(&[&[4.0, 2.0], &[2.0, 5.0]]);
        let u = s.upper_cholesky().unwrap();
        assert_close(u.get(1, 0), 0.0, 0.0);
        assert!(u.get(0, 0) > 0.0 && u.get(1, 1) > 0.0);
        let back = u.transpose().mul(&u);
        assert!(back.sub(&s).frobenius_norm() <= 1e-14 * s.frobenius_norm());
    }

    #[test]
    fn solve_identity_returns_rhs() {
        let rhs = SmallBlock::from_rows(&[&[1.5, -2.0], &[0.25, 3.0]]);
        let x = SmallBlock::identity(2).solve(&rhs).unwrap();
        assert!(x.sub(&rhs).frobenius_norm() <= 1e-15);
    }

    #[test]
    fn solve_diagonal() {
        let s = SmallBlock::from_rows(&[&[2.0, 0.0], &[0.0, 4.0]]);
        let rhs = SmallBlock::from_rows(&[&[2.0], &[8.0]]);
        let x = s.solve(&rhs).unwrap();
        assert_close(x.get(0, 0), 1.0, 1e-15);
        assert_close(x.get(1, 0), 2.0, 1e-15);
    }

    #[test]
    fn solve_random_multiply_back() {
        // seed 3, 5x5: residual check against the multiply-back oracle
        let mut state = 3u64;
        let mut next = move || {
            state = state.wrapping_add(0x9E3779B97F4A7C15);
            let mut z = state;
            z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
            z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
            z ^= z >> 31;
            (z >> 11) as f64 / 9007199254740992.0 * 2.0 - 1.0
        };
        let s = SmallBlock::new(5, 5, (0..25).map(|_| next()).collect());
        let rhs = SmallBlock::new(5, 3, (0..15).map(|_| next()).collect());
        let x = s.solve(&rhs).unwrap();
        let resid = s.mul(&x).sub(&rhs).frobenius_norm();
        assert!(resid <= 1e-12 * s.frobenius_norm() * x.frobenius_norm().max(1.0));
    }

    #[test]
    fn solve_flags_singular() {
        let s = SmallBlock::from_rows(&[&[1.0, 2.0], &[2.0, 4.0]]);
        assert!(matches!(
            s.solve(&SmallBlock::identity(2)),
            Err(Error::Singular)
        ));
    }

    #[test]
    fn jacobi_diagonal_sorted() {
        let s = SmallBlock::from_rows(&[&[3.0, 0.0, 0.0], &[0.0, 1.0, 0.0], &[0.0, 0.0, 2.0]]);
        let (vals, _) = jacobi_eigen(&s).unwrap();
        assert_close(vals[0], 1.0, 1e-14);
        assert_close(vals[1], 2.0, 1e-14);
        assert_close(vals[2], 3.0, 1e-14);
    }

    #[test]
    fn jacobi_symmetric_pair() {
        let s = SmallBlock::from_rows(&[&[0.0, 1.0], &[1.0, 0.0]]);
        let (vals, vecs) = jacobi_eigen(&s).unwrap();
        assert_close(vals[0], -1.0, 1e-14);
        assert_close(vals[1], 1.0, 1e-14);
        // residual ||S v - lambda v||
        for i in 0..2 {
            for r in 0..2 {
                let sv: f64 = (0..2).map(|c| s.get(r, c) * vecs.get(c, i)).sum();
                assert_close(sv, vals[i] * vecs.get(r, i), 1e-12);
            }
        }
    }

    #[test]
    fn jacobi_refuses_beyond_dense_limit() {
        let s = SmallBlock::identity(2001);
        assert!(matches!(jacobi_eigen(&s), Err(Error::TooLarge { .. })));
    }

    #[test]
    fn jacobi_matches_sturm_bisection_on_tridiagonal() {
        // 4x4 symmetric tridiagonal; the oracle brackets each eigenvalue by
        // bisection on the Sturm sign-change count.
        let diag = [2.0, 2.5, 3.0, 1.5];
        let off = [0.7, -0.4, 0.9];
        let mut t = SmallBlock::zeros(4, 4);
        for i in 0..4 {
            t.set(i, i, diag[i]);
        }
        for i in 0..3 {
            t.set(i, i + 1, off[i]);
            t.set(i + 1, i, off[i]);
        }

        // number of eigenvalues of T strictly below x
        let count_below = |x: f64| -> usize {
            let mut count = 0;
            let mut d = diag[0] - x;
            if d < 0.0 {
                count += 1;
            }
            for i in 1..4 {
                let denom = if d == 0.0 { 1e-300 } else { d };
                d = (diag[i] - x) - off[i - 1] * off[i - 1] / denom;
                if d < 0.0 {
                    count += 1;
                }
            }
            count
        };
        let mut oracle = Vec::new();
        for k in 0..4 {
            let (mut lo, mut hi) = (-10.0, 10.0);
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if count_below(mid) > k {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            oracle.push(0.5 * (lo + hi));
        }

        let (vals, _) = jacobi_eigen(&t).unwrap();
        for (a, b) in vals.iter().zip(&oracle) {
            assert_close(*a, *b, 1e-10);
        }
    }

    #[test]
    fn spd_condition_estimate_is_finite_for_spd() {
        let s = SmallBlock::from_rows(&[&[4.0, 1.0], &[1.0, 3.0]]);
        let c = s.spd_condition_estimate();
        assert!(c.is_finite() && c >= 1.0);
        let bad = SmallBlock::from_rows(&[&[1.0, 2.0], &[2.0, 1.0]]);
        assert!(bad.spd_condition_estimate().is_infinite());
    }

    #[test]
    fn cholesky_agrees_with_eigensolver_on_definiteness() {
        // Cross-oracle: cholesky succeeds iff every eigenvalue is positive,
        // on random symmetric 8x8 matrices. Near-boundary cases (|lambda_min|
        // within 1e-10 of zero relative) are excluded.
        let mut state = 1234u64;
        let mut next = move || {
            state = state.wrapping_add(0x9E3779B97F4A7C15);
            let mut z = state;
            z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
            z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
            z ^= z >> 31;
            (z >> 11) as f64 / 9007199254740992.0 * 2.0 - 1.0
        };
        let mut seen_spd = 0;
        let mut seen_indefinite = 0;
        for trial in 0..200 {
            let mut s = SmallBlock::zeros(8, 8);
            for i in 0..8 {
                for j in i..8 {
                    let v = next();
                    s.set(i, j, v);
                    s.set(j, i, v);
                }
            }
            // shift some trials toward definiteness so both branches occur
            if trial % 2 == 0 {
                for i in 0..8 {
                    s.set(i, i, s.get(i, i) + 4.0);
                }
            }
            let (vals, _) = jacobi_eigen(&s).unwrap();
            let scale = s.frobenius_norm();
            if vals[0].abs() <= 1e-10 * scale {
                continue;
            }
            let spd_by_eigen = vals[0] > 0.0;
            let spd_by_cholesky = s.cholesky().is_ok();
            assert_eq!(spd_by_eigen, spd_by_cholesky, "disagree on {s:?}");
            if spd_by_eigen {
                seen_spd += 1;
            } else {
                seen_indefinite += 1;
            }
        }
        assert!(seen_spd > 20 && seen_indefinite > 20, "poor trial coverage");
    }

    #[test]
    fn spd_condition_estimate_ignores_scale_spread() {
        // Well-separated columns at wildly different scales are fine;
        // nearly dependent columns are not.
        let scaled = SmallBlock::from_rows(&[&[1.0, 0.0], &[0.0, 1e-20]]);
        assert!(scaled.spd_condition_estimate() < 10.0);
        let mut degenerate = SmallBlock::from_rows(&[&[1.0, 1.0], &[1.0, 1.0]]);
        degenerate.set(1, 1, 1.0 + 1e-13);
        assert!(degenerate.spd_condition_estimate() > 1e12);
    }
}
