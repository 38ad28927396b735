//! Preconditioned conjugate gradients with an absolute residual stopping
//! rule.
//!
//! ```text
//! r = rhs - N x,  z = P^-1 r,  p = z
//! repeat:
//!     alpha = <r,z> / <p, N p>
//!     x += alpha p;  r -= alpha N p        (explicit refresh every 50 iters)
//!     stop when |r| <= abs_tol             (verified with a fresh product)
//!     z = P^-1 r;  beta = <r,z> / <r_old, z_old>;  p = z + beta p
//! ```
//!
//! The stopping rule deliberately bounds the *unpreconditioned* residual
//! 2-norm, because the outer solver's inexactness theory budgets the Newton
//! system error `|N dy - xi|` against the current barrier parameter.  The
//! inexactness budget itself is [`residual_tolerance_schedule`].

use crate::error::Error;
use crate::linops::LinearOperator;
use crate::vecops::{all_finite, axpy, dot, norm2, xpby};

/// How often the recurrence residual is replaced by an explicitly computed
/// `rhs - N x` to stop floating-point drift.
const EXPLICIT_RECOMPUTE_INTERVAL: usize = 50;

/// Inverse-preconditioner action `v -> P^-1 v`.
///
/// Implementations must be symmetric positive definite as maps, and
/// immutable once built.
pub trait Preconditioner: Send + Sync {
    fn apply_inverse_into(&self, v: &[f64], out: &mut [f64]);

    fn apply_inverse(&self, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; v.len()];
        self.apply_inverse_into(v, &mut out);
        out
    }
}

/// No preconditioning: `P = I`.
#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityPreconditioner;

impl Preconditioner for IdentityPreconditioner {
    fn apply_inverse_into(&self, v: &[f64], out: &mut [f64]) {
        out.copy_from_slice(v);
    }
}

#[derive(Debug, Clone)]
pub struct PcgConfig {
    /// Absolute bound on the unpreconditioned residual 2-norm.
    pub abs_tol: f64,
    /// Iteration cap; exhausting it is not an error.
    pub max_iters: usize,
    /// Log a progress line every this many iterations (0 = never).
    pub report_every: usize,
}

impl Default for PcgConfig {
    fn default() -> Self {
        PcgConfig { abs_tol: 1e-10, max_iters: 1000, report_every: 0 }
    }
}

#[derive(Debug, Clone)]
pub struct PcgResult {
    pub solution: Vec<f64>,
    pub iters: usize,
    pub final_residual_norm: f64,
    /// True exactly when `final_residual_norm <= abs_tol`.
    pub converged: bool,
}

/// Solves `op x = rhs` for a symmetric positive definite operator.
///
/// `warm_start` defaults to the zero vector.  Returns `converged = false`
/// (not an error) when `max_iters` is exhausted; NaN/Inf or nonpositive
/// curvature raise [`Error::PcgBreakdown`] naming the iteration.
pub fn pcg_solve(
    op: &dyn LinearOperator,
    rhs: &[f64],
    precond: &dyn Preconditioner,
    config: &PcgConfig,
    warm_start: Option<&[f64]>,
) -> Result<PcgResult, Error> {
    pcg_solve_observed(op, rhs, precond, config, warm_start, |_, _| {})
}

/// [`pcg_solve`] with a per-iteration observer `(iteration, iterate)`;
/// used by property tests that track the whole iterate path.
pub fn pcg_solve_observed(
    op: &dyn LinearOperator,
    rhs: &[f64],
    precond: &dyn Preconditioner,
    config: &PcgConfig,
    warm_start: Option<&[f64]>,
    mut observe: impl FnMut(usize, &[f64]),
) -> Result<PcgResult, Error> {
    let m = op.rows();
    assert_eq!(op.cols(), m, "pcg_solve: operator must be square, got {}x{}", m, op.cols());
    assert_eq!(rhs.len(), m, "pcg_solve: rhs length {} does not match operator size {}", rhs.len(), m);
    if !(config.abs_tol > 0.0) || !config.abs_tol.is_finite() {
        return Err(Error::InvalidParameter(format!("abs_tol = {:e} must be finite and > 0", config.abs_tol)));
    }
    if config.max_iters == 0 {
        return Err(Error::InvalidParameter("max_iters must be >= 1".into()));
    }
    if !all_finite(rhs) {
        return Err(Error::PcgBreakdown { iteration: 0, reason: "rhs contains NaN or Inf".into() });
    }

    let mut x = match warm_start {
        Some(x0) => {
            assert_eq!(x0.len(), m, "pcg_solve: warm start length {} does not match {}", x0.len(), m);
            x0.to_vec()
        }
        None => vec![0.0; m],
    };

    // With a zero start the initial residual is the right-hand side itself;
    // no product is spent on it.
    let mut r = if x.iter().all(|&v| v == 0.0) {
        rhs.to_vec()
    } else {
        residual(op, rhs, &x)
    };
    let mut res_norm = norm2(&r);
    if !res_norm.is_finite() {
        return Err(Error::PcgBreakdown { iteration: 0, reason: "initial residual is not finite".into() });
    }
    if res_norm <= config.abs_tol {
        return Ok(PcgResult { solution: x, iters: 0, final_residual_norm: res_norm, converged: true });
    }

    let mut z = precond.apply_inverse(&r);
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut ap = vec![0.0; m];

    for it in 1..=config.max_iters {
        op.apply_into(&p, &mut ap);
        let pap = dot(&p, &ap);
        if !pap.is_finite() || pap <= 0.0 {
            return Err(Error::PcgBreakdown {
                iteration: it,
                reason: format!("curvature p'Np = {pap:e} (operator not positive definite?)"),
            });
        }
        let alpha = rz / pap;
        axpy(alpha, &p, &mut x);

        let mut fresh = false;
        if it % EXPLICIT_RECOMPUTE_INTERVAL == 0 {
            r = residual(op, rhs, &x);
            fresh = true;
        } else {
            axpy(-alpha, &ap, &mut r);
        }
        res_norm = norm2(&r);
        if !res_norm.is_finite() {
            return Err(Error::PcgBreakdown { iteration: it, reason: "residual is not finite".into() });
        }
        observe(it, &x);
        if config.report_every > 0 && it % config.report_every == 0 {
            log::debug!("pcg iteration {it}: residual {res_norm:e}");
        }

        if res_norm <= config.abs_tol {
            // The recurrence can drift below the true residual; certify the
            // bound with an explicit product before reporting convergence.
            if !fresh {
                r = residual(op, rhs, &x);
                res_norm = norm2(&r);
            }
            if res_norm <= config.abs_tol {
                return Ok(PcgResult { solution: x, iters: it, final_residual_norm: res_norm, converged: true });
            }
            // Drift detected: restart the recursion from the true residual.
            z = precond.apply_inverse(&r);
            p.copy_from_slice(&z);
            rz = dot(&r, &z);
            continue;
        }

        precond.apply_inverse_into(&r, &mut z);
        let rz_next = dot(&r, &z);
        if !rz_next.is_finite() {
            return Err(Error::PcgBreakdown { iteration: it, reason: "preconditioned inner product is not finite".into() });
        }
        let beta = rz_next / rz;
        xpby(&z, beta, &mut p);
        rz = rz_next;
    }

    Ok(PcgResult { solution: x, iters: config.max_iters, final_residual_norm: res_norm, converged: false })
}

fn residual(op: &dyn LinearOperator, rhs: &[f64], x: &[f64]) -> Vec<f64> {
    let mut r = op.apply(x);
    for (ri, bi) in r.iter_mut().zip(rhs) {
        *ri = bi - *ri;
    }
    r
}

/// Inexactness budget for the Newton-system solves: the residual tolerance
/// at barrier parameter `mu` is `max(floor, c * mu)`.
///
/// `mu0` is the initial barrier parameter the constant `c` was calibrated
/// against; it does not enter the bound itself.
pub fn residual_tolerance_schedule(mu: f64, mu0: f64, floor: f64, c: f64) -> f64 {
    debug_assert!(mu >= 0.0 && mu0 >= 0.0 && floor > 0.0 && c > 0.0);
    let _ = mu0;
    (c * mu).max(floor)
}
