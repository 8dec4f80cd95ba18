//! Error type shared across the crate.

use thiserror::Error;

/// Errors produced by the dense kernels, problem ingestion, and solvers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    /// A factorization found column `0`-indexed `{0}` to be numerically
    /// dependent on the previous ones.
    #[error("rank deficient at column {0}")]
    RankDeficient(usize),

    /// Cholesky pivot at 0-indexed position `{0}` was not positive. This is
    /// the SPD test used by the bound-validity monitors.
    #[error("not positive definite (pivot {0})")]
    NotPositiveDefinite(usize),

    #[error("matrix is numerically singular")]
    Singular,

    #[error("matrix is not symmetric")]
    NotSymmetric,

    #[error("eigensolver did not converge within {0} sweeps")]
    NoConvergence(usize),

    #[error("bad Matrix Market header: {0}")]
    BadHeader(String),

    #[error("matrix is not square ({rows}x{cols})")]
    NonSquare { rows: usize, cols: usize },

    #[error("pattern and complex Matrix Market fields are unsupported")]
    PatternOrComplexUnsupported,

    #[error("malformed Matrix Market data: {0}")]
    Parse(String),

    #[error("right-hand side still rank deficient after {0} resampling attempts")]
    PersistentRankDeficiency(usize),

    #[error("problem of order {n} exceeds the dense limit {limit}")]
    TooLarge { n: usize, limit: usize },

    /// The shift mu is not below the spectrum of the tridiagonal matrix: a
    /// diagonal block of the shifted factorization failed its SPD test.
    #[error("shift {mu} is not below the Ritz values (block {block})")]
    ShiftNotBelowSpectrum { mu: f64, block: usize },

    /// A solver coefficient matrix degenerated; `which` names it and
    /// `cond_estimate` is the squared ratio of extreme Cholesky pivots.
    #[error("near-singular coefficient {which} (condition estimate {cond_estimate:.3e})")]
    NearSingularCoefficient {
        which: &'static str,
        cond_estimate: f64,
    },

    #[error("singular scaling matrix Sigma")]
    SingularSigma,

    /// A residual block became rank deficient, so its triangular factor in
    /// the coefficient bridge cannot be formed.
    #[error("singular Phi factor at iteration {0}")]
    SingularPhi(usize),

    /// The bracketed matrix in the Gauss-Radau recurrence could not be solved.
    #[error("singular bracket in the Gauss-Radau recurrence at iteration {0}")]
    SingularBracket(usize),

    #[error("mu must be positive, got {0}")]
    NonPositiveMu(f64),

    #[error("history too short: need iteration {need}, have {have}")]
    InsufficientHistory { need: usize, have: usize },

    #[error("provided reference solution does not satisfy A*X = B")]
    InconsistentTruth,

    /// Reorthogonalization was requested on a streaming Lanczos state that
    /// does not archive the basis.
    #[error("reorthogonalization requires an archival Lanczos state")]
    ArchiveRequired,

    #[error("missing matrix file: {0}")]
    MissingMatrixFile(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

pub type Result<T> = std::result::Result<T, Error>;
