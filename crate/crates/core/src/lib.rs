//! Online coordination of bang-bang EV charging with SDP-relaxed optimal power flow.
//!
//! The numeric core ([`conic`], [`linalg`], [`penalty`]) is generic over [`Real`]; the grid,
//! fleet and control layers work in `f64`.

pub mod builder;
pub mod conic;
pub mod fleet;
pub mod grid;
pub mod linalg;
pub mod micp;
pub mod mpc;
pub mod oracle;
pub mod penalty;
pub mod rank1;
pub mod scalar;

pub use scalar::Real;

pub type ConicProblem64 = conic::ConicProblem<f64>;
pub type ConicProblem32 = conic::ConicProblem<f32>;
pub type ConicSolution64 = conic::ConicSolution<f64>;
pub type SolverSettings64 = conic::SolverSettings<f64>;
pub type HermMatrix64 = conic::HermMatrix<f64>;
pub type Matrix64 = linalg::Matrix<f64>;
