//! Solvers for noise-constrained Tikhonov regularization.
//!
//! Given an ill-conditioned linear system `A x = b` whose right-hand side
//! carries noise of known size `epsilon`, the crate computes the Tikhonov
//! solution together with the regularization parameter for which the
//! residual satisfies the discrepancy principle `||A x - b|| = eta * epsilon`.
//! Three solvers share one matrix-free operator interface:
//!
//! * [`projected_newton`] — Newton steps on a Krylov-projected optimality
//!   system, expanding the subspace by one Golub-Kahan bidiagonalization
//!   step per iteration (two matrix-vector products per iteration).
//! * [`gbit`] — bidiagonal Tikhonov solves with a secant update of the
//!   regularization parameter after each subspace expansion.
//! * [`lagrange`] — full-space Newton on the optimality system with MINRES
//!   inner solves and a merit-function line search.
//!
//! The [`problems`] module generates deblurring and tomography test
//! problems, injects noise of an exact relative size, and provides dense
//! reference oracles used by the test suite and the CLI.

pub mod bidiag;
pub mod gbit;
pub mod lagrange;
pub mod minres;
pub mod operators;
pub mod problems;
pub mod projected_newton;
pub mod solver;

pub use operators::{LinearOperator, OperatorError};
pub use problems::InverseProblem;
pub use solver::{ConvergenceTrace, IterationRecord, SolveError, SolveOutput, SolverConfig};
