//! Block conjugate gradient solvers for symmetric positive definite systems
//! with multiple right-hand sides, AX = B, with per-column lower and upper
//! bounds on the A-norm of the error.
//!
//! The solvers (standard block CG, the O'Leary scaled variant, and the
//! Dubrulle-R variant) emit per-iteration coefficient records from which
//! block Gauss quadrature gives lower bounds and block Gauss-Radau
//! quadrature — given a positive underestimate mu of the smallest
//! eigenvalue — gives upper bounds, both per solution column and tightened
//! by a configurable delay.
//!
//! Layout:
//! - [`dense`]: small dense kernels (Cholesky, LU solves, Jacobi eigen)
//! - [`block`]: block vectors and thin QR
//! - [`sparse`]: CSR symmetric matrices and the sparse-times-block product
//! - [`io`]: Matrix Market, Poisson test problems, seeded right-hand sides
//! - [`lanczos`]: the block Lanczos recurrence and block tridiagonal algebra
//! - [`cg`]: the three solver variants and the solve driver
//! - [`bounds`]: Gauss / Gauss-Radau error bounds and validity monitoring
//! - [`verify`]: dual-route cross-checks at desk scale

// Dense kernels index named dimensions on purpose; iterator rewrites would
// obscure the row/column roles.
#![allow(clippy::needless_range_loop)]

pub mod block;
pub mod bounds;
pub mod cg;
pub mod dense;
pub mod error;
pub mod io;
pub mod lanczos;
pub mod sparse;
pub mod verify;

pub use block::BlockVector;
pub use bounds::{BoundPoint, BoundSeries, RadauSeries};
pub use cg::{
    solve, IterationRecord, SigmaPolicy, SolveOutput, SolveStatus, SolverConfig, Variant,
};
pub use dense::SmallBlock;
pub use error::{Error, Result};
pub use io::ProblemInstance;
pub use lanczos::BlockTridiagonal;
pub use sparse::SparseSpd;
