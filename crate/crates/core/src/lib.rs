//! Sparse additive regression with the sparsity-smoothness penalty.
//!
//! Each component `f_j` is a centred cubic B-spline. The penalty
//! `λ₁ √(‖f_j‖_n² + λ₂ ∫ f_j″²)` becomes a group-lasso norm after a per-block
//! Cholesky change of variables, and the group lasso is solved by block
//! coordinate descent with a KKT certificate.

pub mod error;
pub mod linalg;
pub mod model;
pub mod penalty;
pub mod simulate;
pub mod solver;
pub mod splines;
pub mod tuning;

pub use error::{Error, Result};
pub use model::{AdditiveModelSpec, FittedAdditiveModel};
pub use simulate::SimScenario;
pub use solver::{Family, GroupLassoProblem, Solution, SolverConfig};
pub use splines::{KnotVector, SplineBasis};
pub use tuning::{GridConfig, LambdaGrid, TuneResult};
