//! Matrix-free regularized interior-point solver for separable convex
//! quadratic programs
//!
//! ```text
//!     minimize    1/2 x' Q x + c' x        Q diagonal, Q >= 0
//!     subject to  A x = b
//!                 x_F free,  x_I >= 0,  0 <= x_J <= u_J
//! ```
//!
//! The solver is an interior-point proximal method of multipliers: every
//! outer iteration performs a single predictor-corrector Newton step on a
//! proximally regularized barrier subproblem, then tightens the proximal
//! estimates.  Each Newton step reduces to the regularized normal equations
//!
//! ```text
//!     [ A (Q + Theta^-1 + rho I)^-1 A' + delta I ] dy = xi
//! ```
//!
//! which are solved by preconditioned conjugate gradients.  The system
//! matrix is only ever touched through matrix-vector products, so `A` may be
//! any [`linops::LinearOperator`].  Two preconditioners with tunable rank
//! are provided: a randomized Nystrom approximation ([`nystrom`]) and a
//! partial pivoted Cholesky factorization ([`partial_cholesky`]).
//!
//! Modules:
//! - [`linops`]: operator trait, dense/sparse/diagonal operators, matvec
//!   counters, and the lazily composed normal-equations operator.
//! - [`pcg`]: preconditioned conjugate gradients with an absolute residual
//!   stopping rule and an inexactness schedule tied to the barrier parameter.
//! - [`nystrom`]: randomized Nystrom low-rank approximation and the induced
//!   preconditioner.
//! - [`partial_cholesky`]: rank-`l` pivoted Cholesky preconditioner with a
//!   diagonal Schur-complement approximation.
//! - [`qp_model`]: problem and iterate containers with validation.
//! - [`ippmm`]: the outer solver loop.
//! - [`problems`]: support-vector-machine and portfolio QP builders, a
//!   synthetic covariance generator, and LIBSVM / CSV readers.

pub mod error;
pub mod ippmm;
pub mod linops;
pub mod nystrom;
pub mod partial_cholesky;
pub mod pcg;
pub mod problems;
pub mod qp_model;

mod vecops;

pub use error::Error;
