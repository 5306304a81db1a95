//! Conic modelling layer and a dense primal-dual interior-point solver for
//! mixed zero / nonnegative / second-order / PSD cone programs.

mod cones;
pub mod epigraph;
pub mod hermitian;
mod ipm;
mod problem;

pub use cones::{smat, svec, tri_index, tri_len, ConeKind};
pub use epigraph::{hyperbolic, quadratic_epigraph};
pub use hermitian::{
    embed_hermitian, fix_phase, max_eigpair, EmbeddedEntry, HermMatrix, HermitianEmbedding,
    HermitianVars,
};
pub use ipm::{solve, ConicSolution, IterationRecord, SolveStatus, SolverSettings};
pub use problem::{
    BlockKind, ConeConstraint, ConicProblem, ConstraintId, LinExpr, VarBlock, VarId,
};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ConicError {
    #[error("variable {var} out of range ({n_vars} variables) in {location}")]
    UnknownVariable {
        var: usize,
        n_vars: usize,
        location: String,
    },
    #[error("non-finite coefficient in {0}")]
    NonFinite(String),
    #[error("constraint {constraint}: {reason}")]
    BadDimension { constraint: usize, reason: String },
    #[error("matrix is not Hermitian (max deviation {deviation:e})")]
    NotHermitian { deviation: f64 },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("dimension mismatch: {0}")]
    Shape(String),
}
