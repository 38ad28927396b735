//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// A diagonal scaling entry of the normal-equations operator was not
    /// strictly positive, so `(Q + Theta^-1 + rho I)^-1` does not exist.
    #[error("nonpositive scaling at index {index}: Q_jj + theta_inv_j + rho = {value:e} (must be > 0)")]
    NonpositiveScaling { index: usize, value: f64 },

    /// A caller-supplied parameter is outside its documented domain.
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// Conjugate gradients hit a NaN/Inf or a nonpositive curvature
    /// `p' A p`, which cannot happen for an SPD operator.
    #[error("numerical breakdown in PCG at iteration {iteration}: {reason}")]
    PcgBreakdown { iteration: usize, reason: String },

    /// The Cholesky factorization of the sketch Gram matrix failed even
    /// after the documented shift escalations.
    #[error("Nystrom sketch failure: Gram Cholesky not positive definite after {attempts} shift attempts (last shift {last_shift:e})")]
    SketchFailure { attempts: usize, last_shift: f64 },

    /// A problem description failed validation; one message per defect.
    #[error("invalid problem: {}", .0.join("; "))]
    InvalidProblem(Vec<String>),

    /// Malformed input data (line numbers are 1-based).
    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },

    /// Input data is syntactically valid but unusable.
    #[error("bad data: {0}")]
    Data(String),

    /// The outer solver could not make progress after the documented
    /// regularization escalations.
    #[error("numerical failure: {0}")]
    NumericalFailure(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
