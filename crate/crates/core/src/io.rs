//! Problem ingestion: Matrix Market parsing, 5-point Poisson generation,
//! seeded random right-hand sides, and dense reference solves for truth data.

use crate::block::BlockVector;
use crate::dense::{SmallBlock, ABS_FLOOR};
use crate::error::{Error, Result};
use crate::sparse::SparseSpd;

/// Order above which dense reference factorizations are refused.
pub const DENSE_LIMIT: usize = 5000;

/// A linear system AX = B, optionally with a reference solution and a
/// positive underestimate of the smallest eigenvalue.
#[derive(Debug, Clone)]
pub struct ProblemInstance {
    pub a: SparseSpd,
    pub b: BlockVector,
    pub x_true: Option<BlockVector>,
    pub lambda_min_hint: Option<f64>,
}

impl ProblemInstance {
    pub fn new(
        a: SparseSpd,
        b: BlockVector,
        x_true: Option<BlockVector>,
        lambda_min_hint: Option<f64>,
    ) -> Result<Self> {
        if b.n() != a.n() {
            return Err(Error::DimensionMismatch(format!(
                "A order {} vs B rows {}",
                a.n(),
                b.n()
            )));
        }
        if let Some(hint) = lambda_min_hint {
            if hint <= 0.0 {
                return Err(Error::NonPositiveMu(hint));
            }
        }
        if let Some(ref xt) = x_true {
            let resid = a.spmm(xt)?.sub(&b).frobenius_norm();
            if resid > 1e-10 * b.frobenius_norm().max(ABS_FLOOR) {
                return Err(Error::InconsistentTruth);
            }
        }
        Ok(Self {
            a,
            b,
            x_true,
            lambda_min_hint,
        })
    }
}

/// Parse a Matrix Market "coordinate real" file into expanded symmetric
/// storage. `symmetric` headers are mirrored; `general` headers are accepted
/// only when the assembled matrix is numerically symmetric.
pub fn parse_matrix_market(text: &str) -> Result<SparseSpd> {
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::BadHeader("empty input".into()))?;
    let fields: Vec<String> = header
        .split_whitespace()
        .map(|s| s.to_lowercase())
        .collect();
    if fields.len() < 5 || fields[0] != "%%matrixmarket" {
        return Err(Error::BadHeader(header.into()));
    }
    if fields[1] != "matrix" || fields[2] != "coordinate" {
        return Err(Error::BadHeader(header.into()));
    }
    match fields[3].as_str() {
        "real" | "integer" => {}
        "pattern" | "complex" => return Err(Error::PatternOrComplexUnsupported),
        _ => return Err(Error::BadHeader(header.into())),
    }
    let symmetric = match fields[4].as_str() {
        "symmetric" => true,
        "general" => false,
        _ => return Err(Error::BadHeader(header.into())),
    };

    let mut size_line = None;
    for line in lines.by_ref() {
        let t = line.trim();
        if t.is_empty() || t.starts_with('%') {
            continue;
        }
        size_line = Some(t.to_string());
        break;
    }
    let size_line = size_line.ok_or_else(|| Error::Parse("missing size line".into()))?;
    let dims: Vec<usize> = size_line
        .split_whitespace()
        .map(|w| {
            w.parse::<usize>()
                .map_err(|_| Error::Parse(format!("bad size line: {size_line}")))
        })
        .collect::<Result<_>>()?;
    if dims.len() != 3 {
        return Err(Error::Parse(format!("bad size line: {size_line}")));
    }
    let (rows, cols, nnz) = (dims[0], dims[1], dims[2]);
    if rows != cols {
        return Err(Error::NonSquare { rows, cols });
    }

    let mut triplets = Vec::with_capacity(2 * nnz);
    let mut seen = 0usize;
    for line in lines {
        let t = line.trim();
        if t.is_empty() || t.starts_with('%') {
            continue;
        }
        let mut words = t.split_whitespace();
        let i: usize = words
            .next()
            .ok_or_else(|| Error::Parse(format!("bad entry: {t}")))?
            .parse()
            .map_err(|_| Error::Parse(format!("bad row index: {t}")))?;
        let j: usize = words
            .next()
            .ok_or_else(|| Error::Parse(format!("bad entry: {t}")))?
            .parse()
            .map_err(|_| Error::Parse(format!("bad column index: {t}")))?;
        let v: f64 = words
            .next()
            .ok_or_else(|| Error::Parse(format!("missing value: {t}")))?
            .parse()
            .map_err(|_| Error::Parse(format!("bad value: {t}")))?;
        if i == 0 || j == 0 || i > rows || j > cols {
            return Err(Error::Parse(format!("index out of range: {t}")));
        }
        seen += 1;
        // 1-based to 0-based
        triplets.push((i - 1, j - 1, v));
        if symmetric && i != j {
            triplets.push((j - 1, i - 1, v));
        }
    }
    if seen != nnz {
        return Err(Error::Parse(format!(
            "expected {nnz} entries, found {seen}"
        )));
    }

    let a = SparseSpd::from_triplets(rows, &triplets)?;
    if !symmetric {
        let tol = 1e-12 * a.max_abs().max(ABS_FLOOR);
        if a.max_asymmetry() > tol {
            return Err(Error::NotSymmetric);
        }
    }
    Ok(a)
}

/// Write Matrix Market "coordinate real symmetric" text (lower triangle,
/// 1-based, 17 significant digits). Round-trips through
/// [`parse_matrix_market`] exactly.
pub fn write_matrix_market(a: &SparseSpd) -> String {
    let mut entries = Vec::new();
    for i in 0..a.n() {
        let (cols, vals) = a.row(i);
        for (&j, &v) in cols.iter().zip(vals) {
            if j <= i {
                entries.push((i, j, v));
            }
        }
    }
    let mut out = String::from("%%MatrixMarket matrix coordinate real symmetric\n");
    out.push_str(&format!("{} {} {}\n", a.n(), a.n(), entries.len()));
    for (i, j, v) in entries {
        out.push_str(&format!("{} {} {:.16e}\n", i + 1, j + 1, v));
    }
    out
}

/// 5-point finite difference Laplacian on a k-by-k interior grid of the unit
/// square with Dirichlet boundary: 4 on the diagonal, -1 for grid neighbors,
/// unscaled (no h^2 division). Order n = k^2.
pub fn poisson2d(k: usize) -> SparseSpd {
    assert!(k >= 1, "mesh must have at least one interior point");
    let n = k * k;
    let idx = |r: usize, c: usize| r * k + c;
    let mut triplets = Vec::with_capacity(5 * n);
    for r in 0..k {
        for c in 0..k {
            let i = idx(r, c);
            triplets.push((i, i, 4.0));
            if r > 0 {
                triplets.push((i, idx(r - 1, c), -1.0));
            }
            if r + 1 < k {
                triplets.push((i, idx(r + 1, c), -1.0));
            }
            if c > 0 {
                triplets.push((i, idx(r, c - 1), -1.0));
            }
            if c + 1 < k {
                triplets.push((i, idx(r, c + 1), -1.0));
            }
        }
    }
    SparseSpd::from_triplets(n, &triplets).expect("stencil is structurally symmetric")
}

/// Eigenvalues of [`poisson2d`] in closed form: 4(sin^2(i pi / 2(k+1)) +
/// sin^2(j pi / 2(k+1))) for i, j = 1..k, ascending.
pub fn poisson2d_eigenvalues(k: usize) -> Vec<f64> {
    let mut vals = Vec::with_capacity(k * k);
    for i in 1..=k {
        for j in 1..=k {
            let si = (i as f64 * std::f64::consts::PI / (2.0 * (k as f64 + 1.0))).sin();
            let sj = (j as f64 * std::f64::consts::PI / (2.0 * (k as f64 + 1.0))).sin();
            vals.push(4.0 * (si * si + sj * sj));
        }
    }
    vals.sort_by(f64::total_cmp);
    vals
}

/// SplitMix64: the documented PRNG behind [`random_rhs`]. 64-bit state,
/// one add and two xor-multiply mixes per draw; identical streams on every
/// platform.
#[derive(Debug, Clone)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        Self { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9E3779B97F4A7C15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
        z ^ (z >> 31)
    }

    /// Uniform on [0, 1) with 53 random bits.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 / 9007199254740992.0
    }

    /// Uniform on [-1, 1).
    pub fn next_pm1(&mut self) -> f64 {
        2.0 * self.next_f64() - 1.0
    }
}

const RHS_RESAMPLE_ATTEMPTS: usize = 3;

/// n-by-m right-hand side with i.i.d. entries uniform on [-1, 1], drawn from
/// SplitMix64 seeded with `seed` (row-major fill order). Full column rank is
/// enforced by resampling from the continuing stream, at most 3 times.
pub fn random_rhs(n: usize, m: usize, seed: u64) -> Result<BlockVector> {
    assert!(m <= n, "column count must not exceed the order");
    let mut rng = SplitMix64::new(seed);
    for _ in 0..RHS_RESAMPLE_ATTEMPTS {
        let b = BlockVector::from_fn(n, m, |_, _| rng.next_pm1());
        match b.qr_thin() {
            Ok(_) => return Ok(b),
            Err(Error::RankDeficient(_)) => continue,
            Err(e) => return Err(e),
        }
    }
    Err(Error::PersistentRankDeficiency(RHS_RESAMPLE_ATTEMPTS))
}

/// Solve AX = B by a dense Cholesky factorization, for truth data at desk
/// scale (n <= 5000). Independent of the iterative solvers.
pub fn dense_reference_solve(a: &SparseSpd, b: &BlockVector) -> Result<BlockVector> {
    if a.n() > DENSE_LIMIT {
        return Err(Error::TooLarge {
            n: a.n(),
            limit: DENSE_LIMIT,
        });
    }
    if b.n() != a.n() {
        return Err(Error::DimensionMismatch(format!(
            "A order {} vs B rows {}",
            a.n(),
            b.n()
        )));
    }
    let l = a.to_dense().cholesky()?;
    Ok(cholesky_solve(&l, b))
}

/// Forward/back substitution with a dense lower factor L (A = L L^T).
pub(crate) fn cholesky_solve(l: &SmallBlock, b: &BlockVector) -> BlockVector {
    let n = b.n();
    let m = b.m();
    let mut x = b.clone();
    // L y = b
    for i in 0..n {
        for c in 0..m {
            let mut v = x.get(i, c);
            for k in 0..i {
                v -= l.get(i, k) * x.get(k, c);
            }
            x.set(i, c, v / l.get(i, i));
        }
    }
    // L^T x = y
    for i in (0..n).rev() {
        for c in 0..m {
            let mut v = x.get(i, c);
            for k in (i + 1)..n {
                v -= l.get(k, i) * x.get(k, c);
            }
            x.set(i, c, v / l.get(i, i));
        }
    }
    x
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dense::jacobi_eigen;

    #[test]
    fn parse_one_by_one() {
        let text = "%%MatrixMarket matrix coordinate real symmetric\n1 1 1\n1 1 2.5\n";
        let a = parse_matrix_market(text).unwrap();
        assert_eq!(a.n(), 1);
        assert_eq!(a.get(0, 0), Some(2.5));
    }

    #[test]
    fn parse_expands_symmetric_storage() {
        let text = "%%MatrixMarket matrix coordinate real symmetric\n% comment\n2 2 3\n1 1 2.0\n2 2 2.0\n2 1 -1.0\n";
        let a = parse_matrix_market(text).unwrap();
        assert_eq!(a.get(0, 1), Some(-1.0));
        assert_eq!(a.get(1, 0), Some(-1.0));
        // the off-diagonal entry appears once in the file, twice in storage
        assert_eq!(a.nnz(), 4);
    }

    #[test]
    fn parse_rejects_bad_header() {
        assert!(matches!(
            parse_matrix_market("%%MatrixMarket matrix array real general\n1 1\n1.0\n"),
            Err(Error::BadHeader(_))
        ));
        assert!(matches!(
            parse_matrix_market(
                "%%MatrixMarket matrix coordinate complex symmetric\n1 1 1\n1 1 1 0\n"
            ),
            Err(Error::PatternOrComplexUnsupported)
        ));
        assert!(matches!(
            parse_matrix_market(
                "%%MatrixMarket matrix coordinate real symmetric\n2 3 1\n1 1 1.0\n"
            ),
            Err(Error::NonSquare { .. })
        ));
    }

    #[test]
    fn parse_rejects_asymmetric_general() {
        let text = "%%MatrixMarket matrix coordinate real general\n2 2 4\n1 1 2.0\n1 2 1.0\n2 1 0.5\n2 2 2.0\n";
        assert!(matches!(
            parse_matrix_market(text),
            Err(Error::NotSymmetric)
        ));
    }

    #[test]
    fn parse_accepts_symmetric_general() {
        let text = "%%MatrixMarket matrix coordinate real general\n2 2 4\n1 1 2.0\n1 2 1.0\n2 1 1.0\n2 2 2.0\n";
        let a = parse_matrix_market(text).unwrap();
        assert_eq!(a.get(0, 1), Some(1.0));
    }

    #[test]
    fn parse_rejects_truncated_and_malformed_input() {
        for text in [
            "",
            "%%MatrixMarket matrix coordinate real symmetric\n",
            "%%MatrixMarket matrix coordinate real symmetric\n2 2 2\n1 1 1.0\n",
            "%%MatrixMarket matrix coordinate real symmetric\n1 1 1\n1 1 abc\n",
            "%%MatrixMarket matrix coordinate real symmetric\n1 1 1\n0 1 1.0\n",
            "%%MatrixMarket matrix coordinate real symmetric\n1 1 1\n2 1 1.0\n",
            "%%MatrixMarket matrix coordinate real symmetric\nnot a size line\n",
        ] {
            assert!(parse_matrix_market(text).is_err(), "accepted: {text:?}");
        }
    }

    mod parser_fuzz {
        use super::super::parse_matrix_market;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(256))]

            // Arbitrary text must never panic the parser, including inputs
            // that start with a plausible header.
            #[test]
            fn never_panics(garbage in ".{0,200}") {
                let _ = parse_matrix_market(&garbage);
                let with_header = format!(
                    "%%MatrixMarket matrix coordinate real symmetric\n{garbage}"
                );
                let _ = parse_matrix_market(&with_header);
            }
        }
    }

    #[test]
    fn roundtrip_preserves_structure_and_values() {
        let a = poisson2d(4);
        let text = write_matrix_market(&a);
        let b = parse_matrix_market(&text).unwrap();
        assert_eq!(a, b);

        // and with non-trivial floating point values
        let mut rng = SplitMix64::new(99);
        let n = 12;
        let mut triplets = Vec::new();
        for i in 0..n {
            triplets.push((i, i, 3.0 + rng.next_f64()));
            if i + 1 < n {
                let v = rng.next_pm1() * 0.73;
                triplets.push((i, i + 1, v));
                triplets.push((i + 1, i, v));
            }
        }
        let a = SparseSpd::from_triplets(n, &triplets).unwrap();
        let b = parse_matrix_market(&write_matrix_market(&a)).unwrap();
        assert_eq!(a, b, "17 significant digits round-trip exactly");
    }

    #[test]
    fn poisson_k1_is_four() {
        let a = poisson2d(1);
        assert_eq!(a.n(), 1);
        assert_eq!(a.get(0, 0), Some(4.0));
    }

    #[test]
    fn poisson_k30_smallest_eigenvalue() {
        let vals = poisson2d_eigenvalues(30);
        assert!(
            (vals[0] - 0.02052270).abs() < 5e-7,
            "lambda_1 = {}",
            vals[0]
        );
    }

    #[test]
    fn poisson_k4_lambda_min_closed_form_vs_eigensolver() {
        let a = poisson2d(4);
        let (vals, _) = jacobi_eigen(&a.to_dense()).unwrap();
        let closed = poisson2d_eigenvalues(4);
        assert!((closed[0] - 0.763932).abs() < 1e-6);
        for (v, c) in vals.iter().zip(&closed) {
            assert!((v - c).abs() <= 1e-10, "{v} vs {c}");
        }
    }

    #[test]
    fn poisson_eigenvalues_match_closed_form_through_k12() {
        for k in [2usize, 3, 5, 8, 12] {
            let a = poisson2d(k);
            let (vals, _) = jacobi_eigen(&a.to_dense()).unwrap();
            let closed = poisson2d_eigenvalues(k);
            for (v, c) in vals.iter().zip(&closed) {
                assert!((v - c).abs() <= 1e-10, "k={k}: {v} vs {c}");
            }
        }
    }

    #[test]
    fn random_rhs_is_deterministic() {
        let a = random_rhs(5, 1, 0).unwrap();
        let b = random_rhs(5, 1, 0).unwrap();
        assert_eq!(a.data(), b.data());
        for v in a.data() {
            assert!((-1.0..1.0).contains(v));
        }
    }

    #[test]
    fn random_rhs_full_rank_and_seed_sensitive() {
        let b = random_rhs(900, 10, 1).unwrap();
        assert!(b.qr_thin().is_ok(), "must be full column rank");
        let c = random_rhs(900, 10, 2).unwrap();
        assert!(b.sub(&c).frobenius_norm() > 0.0);
    }

    #[test]
    fn dense_reference_identity() {
        let a = SparseSpd::identity(3);
        let b = BlockVector::from_fn(3, 2, |i, j| (i + j) as f64 + 1.0);
        let x = dense_reference_solve(&a, &b).unwrap();
        assert!(x.sub(&b).frobenius_norm() < 1e-14);

        let d = SparseSpd::diagonal(&[2.0]).unwrap();
        let rhs = BlockVector::new(1, 1, vec![4.0]);
        let x = dense_reference_solve(&d, &rhs).unwrap();
        assert!((x.get(0, 0) - 2.0).abs() < 1e-15);
    }

    #[test]
    fn dense_reference_poisson_residual() {
        let a = poisson2d(5);
        let b = random_rhs(25, 3, 2).unwrap();
        let x = dense_reference_solve(&a, &b).unwrap();
        let resid = a.spmm(&x).unwrap().sub(&b).frobenius_norm();
        assert!(resid <= 1e-10 * b.frobenius_norm());
    }

    #[test]
    fn problem_instance_validates_truth() {
        let a = poisson2d(3);
        let b = random_rhs(9, 2, 7).unwrap();
        let x = dense_reference_solve(&a, &b).unwrap();
        assert!(ProblemInstance::new(a.clone(), b.clone(), Some(x), Some(0.5)).is_ok());
        let wrong = BlockVector::zeros(9, 2);
        assert!(matches!(
            ProblemInstance::new(a.clone(), b.clone(), Some(wrong), None),
            Err(Error::InconsistentTruth)
        ));
        assert!(matches!(
            ProblemInstance::new(a, b, None, Some(-1.0)),
            Err(Error::NonPositiveMu(_))
        ));
    }
}
