//! Regularized interior-point solver for separable convex QPs.
//!
//! Outer loop: a proximal method of multipliers. Each subproblem gets a single
//! predictor-corrector interior-point step, after which the proximal centers
//! and regularization weights are updated:
//!
//! ```text
//! loop:
//!     residuals, duality measure mu; stop when all four are <= tol
//!     theta_inv_j = 0 (free) | z_j/x_j (nonneg) | z_j/x_j + s_j/w_j (boxed)
//!     D = Q_diag + theta_inv + rho I   (diagonal)
//!     N_delta = A D^-1 A' + delta I    (normal equations, matrix-free)
//!     build preconditioner for N_delta (identity / Nystrom / partial Cholesky)
//!     predictor: solve Newton system, affine step sizes, mu_aff
//!     corrector: centering-plus-correction right-hand side, second solve
//!     step x,w by alpha_p and y,z,s by alpha_d (factor 0.995, capped at 1)
//!     proximal update: shrink rho/delta, recenter (lambda, zeta)
//! ```
//!
//! Both Newton solves reduce to the m-by-m normal equations and are answered
//! by preconditioned CG to an absolute tolerance `max(floor, c * mu)`. The
//! five-block direction is recovered from `dy` in closed form; its block-2
//! residual equals the CG residual, so inexactness lives only in that block.
//!
//! A stalled step (vanishing step size, non-decreasing mu, or CG failure)
//! raises both regularization weights a hundredfold, capped at their initial
//! values; three consecutive escalations without an accepted step abort with
//! `NumericalFailure`. Entirely equality-constrained problems skip the
//! barrier machinery and run regularized normal-equation corrections alone.

use std::sync::Arc;
use std::time::Instant;

use crate::error::Error;
use crate::linops::{CountedOp, LinearOperator, MatvecCounter, NormalEqOp};
use crate::nystrom::{build_nystrom_preconditioner, nystrom_approximation};
use crate::partial_cholesky::build_partial_cholesky;
use crate::pcg::{
    pcg_solve, residual_tolerance_schedule, IdentityPreconditioner, PcgConfig, PcgResult,
    Preconditioner,
};
use crate::qp_model::{
    compute_residuals, duality_measure, objective_value, IterateState, PmmParams, QpProblem,
    Residuals, PMM_REG_FLOOR,
};
use crate::vecops::all_finite;

/// Smallest admissible step size before the iteration counts as stalled.
pub const STEP_STALL_TOL: f64 = 1e-12;
/// Step-size damping factor keeping iterates strictly interior.
pub const STEP_DAMPING: f64 = 0.995;
/// Multiplier applied to (rho, delta) when a hard stall forces
/// re-regularization.
pub const STALL_ESCALATION: f64 = 100.0;
/// Consecutive escalations tolerated before giving up.
pub const MAX_STALL_ESCALATIONS: usize = 3;
/// Rejected attempts tolerated between accepted steps before giving up.
pub const MAX_CONSECUTIVE_STALLS: usize = 40;
/// Ceiling on the corrector's centering target as a fraction of the current
/// duality measure. The cubic heuristic target can land at or above the
/// current measure when the predictor is blocked asymmetrically, and any
/// step along a direction aimed there raises complementarity.
pub const CENTERING_CAP: f64 = 0.9;
/// Centering parameter of the fallback direction tried when the combined
/// predictor-corrector step cannot decrease the duality measure. A single
/// Newton direction aimed at `sigma * mu` has slope `(sigma - 1) * mu < 0`
/// for the measure under equal stepsizes, so some fraction of it always
/// makes progress while also contracting the infeasibility residuals.
pub const FALLBACK_CENTERING: f64 = 0.5;
/// Ridge weight used by the least-squares starting-point solves.
const STARTING_POINT_RIDGE: f64 = 10.0;

/// Which preconditioner the normal-equation solves use.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PreconditionerKind {
    /// Plain CG.
    None,
    /// Randomized Nystrom approximation of the (unshifted) normal matrix.
    Nystrom { rank: usize },
    /// Partial Cholesky with statically chosen pivots.
    PartialCholesky { rank: usize },
}

/// Tuning knobs for [`solve`].
#[derive(Clone, Debug)]
pub struct SolverConfig {
    /// Relative residual / duality-measure tolerance (inclusive).
    pub tol: f64,
    /// Outer-iteration budget.
    pub max_outer: usize,
    pub preconditioner: PreconditionerKind,
    /// Template for the inner CG solves; `abs_tol` is overridden by the
    /// mu-proportional schedule each outer iteration.
    pub pcg: PcgConfig,
    /// Proportionality constant of the inner tolerance schedule.
    pub inexact_c: f64,
    /// Floor of the inner tolerance schedule.
    pub inexact_floor: f64,
    /// Seed for the sketch; each outer iteration derives its own stream.
    pub rng_seed: u64,
    /// Initial proximal weights (primal rho, dual delta).
    pub rho0: f64,
    pub delta0: f64,
    /// Double the sketch size whenever an outer iteration spends more than
    /// `adaptive_budget` CG iterations (Nystrom preconditioner only).
    pub adaptive_rank: bool,
    pub adaptive_budget: usize,
    /// Tolerance stages (e.g. `[1e-2, 1e-4]`) at which to capture the scaling
    /// diagnostics in [`SolveReport::snapshots`].
    pub stage_snapshots: Vec<f64>,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            tol: 1e-8,
            max_outer: 100,
            preconditioner: PreconditionerKind::None,
            pcg: PcgConfig { abs_tol: 1e-10, max_iters: 2000, report_every: 0 },
            inexact_c: 1e-2,
            inexact_floor: 1e-10,
            rng_seed: 0,
            rho0: 8.0,
            delta0: 8.0,
            adaptive_rank: false,
            adaptive_budget: 200,
            stage_snapshots: Vec::new(),
        }
    }
}

/// How a solve ended.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SolveStatus {
    /// All four termination tests passed.
    Optimal,
    /// Outer-iteration budget exhausted.
    IterationLimit,
    /// Repeated stalls that re-regularization could not fix.
    NumericalFailure,
}

/// Right-hand side of one Newton system, in the five-block layout.
#[derive(Clone, Debug)]
pub struct NewtonRhs {
    /// Dual block (length n).
    pub r_d: Vec<f64>,
    /// Primal block (length m).
    pub r_p: Vec<f64>,
    /// Box-link block (length n, zero off the boxed set).
    pub r_u: Vec<f64>,
    /// Complementarity block for (x, z) (length n, zero on the free set).
    pub r_xz: Vec<f64>,
    /// Complementarity block for (w, s) (length n, zero off the boxed set).
    pub r_ws: Vec<f64>,
}

/// One Newton direction, padded with zeros exactly like the iterate.
#[derive(Clone, Debug)]
pub struct Direction {
    pub dx: Vec<f64>,
    pub dy: Vec<f64>,
    pub dz: Vec<f64>,
    pub dw: Vec<f64>,
    pub ds: Vec<f64>,
}

/// Which Newton system a solve belonged to, as seen by a [`NewtonObserver`]:
/// the affine-scaling predictor, the centering-plus-correction corrector, or
/// the fixed-centering fallback used when the combined Mehrotra direction
/// cannot decrease the duality measure.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NewtonKind {
    Predictor,
    Corrector,
    Centering,
}

/// Everything an observer needs to audit one Newton solve.
pub struct NewtonContext<'a> {
    pub kind: NewtonKind,
    /// Outer iteration index the solve belongs to.
    pub iter: usize,
    pub problem: &'a QpProblem,
    /// Iterate the system was linearized at.
    pub state: &'a IterateState,
    pub params: &'a PmmParams,
    pub rhs: &'a NewtonRhs,
    pub direction: &'a Direction,
    /// Absolute CG tolerance the solve was asked for.
    pub pcg_tol: f64,
    pub pcg: &'a PcgResult,
}

/// Callback invoked after every Newton solve (including stalled attempts).
pub trait NewtonObserver {
    fn on_newton(&mut self, ctx: &NewtonContext<'_>);
}

/// Per-accepted-iteration diagnostics.
#[derive(Clone, Debug)]
pub struct IterationRecord {
    /// Outer iteration index (0-based).
    pub iter: usize,
    /// Duality measure at the start of the iteration.
    pub mu: f64,
    /// Relative residuals at the start of the iteration.
    pub rel_p: f64,
    pub rel_d: f64,
    pub rel_u: f64,
    /// Regularization weights used by this iteration's Newton systems.
    pub rho: f64,
    pub delta: f64,
    /// Preconditioner rank actually used (0 for plain CG).
    pub rank: usize,
    pub pcg_iters_predictor: usize,
    pub pcg_iters_corrector: usize,
    /// Iterations of the fallback centering solve, when one was needed.
    pub pcg_iters_centering: usize,
    /// Constraint-matrix products (A or A') spent building the preconditioner.
    pub matvecs_precond: u64,
    /// Products spent inside the two CG solves.
    pub matvecs_pcg: u64,
    /// All products attributed to this iteration, including residual
    /// computations and any stalled attempts retried under escalation.
    pub matvecs_total: u64,
    pub precond_build_secs: f64,
    pub pcg_secs: f64,
    pub total_secs: f64,
    pub alpha_p: f64,
    pub alpha_d: f64,
}

/// Scaling diagnostics captured when the iterate first reaches a stage.
#[derive(Clone, Debug)]
pub struct StageSnapshot {
    /// The stage tolerance that triggered the capture.
    pub stage: f64,
    /// Outer iteration at which it was reached.
    pub iter: usize,
    pub theta_inv: Vec<f64>,
    pub rho: f64,
    pub delta: f64,
}

/// Outcome of [`solve`].
#[derive(Clone, Debug)]
pub struct SolveReport {
    pub status: SolveStatus,
    /// Human-readable detail for non-optimal statuses.
    pub status_detail: String,
    /// Number of accepted outer iterations.
    pub outer_iters: usize,
    pub records: Vec<IterationRecord>,
    /// Final iterate.
    pub state: IterateState,
    /// Residuals of the final iterate.
    pub residuals: Residuals,
    /// Primal objective at the final iterate.
    pub objective: f64,
    /// Constraint-matrix products spent on the starting point.
    pub matvecs_initial_point: u64,
    /// Products spent after the last accepted iteration (final residual
    /// check plus any trailing stalled attempts).
    pub matvecs_tail: u64,
    /// Grand total; equals initial + sum of records + tail.
    pub matvecs_total: u64,
    /// Steps rejected because a component lost strict positivity.
    pub positivity_violations: u64,
    /// Largest accepted step size across the run.
    pub max_alpha: f64,
    pub snapshots: Vec<StageSnapshot>,
}

/// `theta_inv_j = 0 | z_j/x_j | z_j/x_j + s_j/w_j` per variable class.
pub fn theta_inverse(problem: &QpProblem, state: &IterateState) -> Vec<f64> {
    let mut out = vec![0.0; problem.n()];
    for &j in &problem.idx_nonneg {
        out[j] = state.z[j] / state.x[j];
    }
    for &j in &problem.idx_box {
        out[j] = state.z[j] / state.x[j] + state.s[j] / state.w[j];
    }
    out
}

/// Inclusive four-way termination test.
pub fn check_termination(res: &Residuals, mu: f64, tol: f64) -> bool {
    res.rel_p <= tol && res.rel_d <= tol && res.rel_u <= tol && mu <= tol
}

/// Damped ratio test: how far x, w (primal) and z, s (dual) may move.
///
/// `alpha = 0.995 * min(1, min_j -v_j / dv_j over dv_j < 0)` with the
/// minimum taken over the components that must stay positive; empty sets
/// give `alpha = 0.995`.
pub fn step_sizes(problem: &QpProblem, state: &IterateState, dir: &Direction) -> (f64, f64) {
    let mut ratio_p = 1.0f64;
    let mut ratio_d = 1.0f64;
    let ratio = |v: f64, dv: f64| -> f64 {
        if dv < 0.0 {
            -v / dv
        } else {
            f64::INFINITY
        }
    };
    for &j in problem.idx_nonneg.iter().chain(&problem.idx_box) {
        ratio_p = ratio_p.min(ratio(state.x[j], dir.dx[j]));
        ratio_d = ratio_d.min(ratio(state.z[j], dir.dz[j]));
    }
    for &j in &problem.idx_box {
        ratio_p = ratio_p.min(ratio(state.w[j], dir.dw[j]));
        ratio_d = ratio_d.min(ratio(state.s[j], dir.ds[j]));
    }
    (STEP_DAMPING * ratio_p, STEP_DAMPING * ratio_d)
}

/// Proximal-update rule applied after every accepted step.
///
/// If the primal infeasibility decreased, shrink `delta` by
/// `max(0.1, mu_new / mu_old)` and recenter `lambda` at the new `y`;
/// otherwise halve it. Symmetrically for `rho`, `zeta` with the dual
/// infeasibility. Both weights are floored at [`PMM_REG_FLOOR`].
pub fn update_pmm_params(
    params: &mut PmmParams,
    state: &IterateState,
    res_old: &Residuals,
    res_new: &Residuals,
    mu_ratio: f64,
) {
    if res_new.rel_p < res_old.rel_p {
        params.delta = (params.delta * mu_ratio.max(0.1)).max(PMM_REG_FLOOR);
        params.lambda_est.copy_from_slice(&state.y);
    } else {
        params.delta = (0.5 * params.delta).max(PMM_REG_FLOOR);
    }
    if res_new.rel_d < res_old.rel_d {
        params.rho = (params.rho * mu_ratio.max(0.1)).max(PMM_REG_FLOOR);
        params.zeta_est.copy_from_slice(&state.x);
    } else {
        params.rho = (0.5 * params.rho).max(PMM_REG_FLOOR);
    }
}

/// Predictor right-hand side at the current iterate.
///
/// Reuses the plain KKT residuals: the regularized dual block is
/// `r_d + rho (x - zeta)` and the regularized primal block is
/// `r_p - delta (y - lambda)`; the complementarity blocks target zero
/// (`r_xz = -x . z`, `r_ws = -w . s`).
fn predictor_rhs(
    problem: &QpProblem,
    state: &IterateState,
    params: &PmmParams,
    res: &Residuals,
) -> NewtonRhs {
    let n = problem.n();
    let mut r_d = res.r_d.clone();
    let mut r_p = res.r_p.clone();
    for j in 0..n {
        r_d[j] += params.rho * (state.x[j] - params.zeta_est[j]);
    }
    for i in 0..problem.m() {
        r_p[i] -= params.delta * (state.y[i] - params.lambda_est[i]);
    }
    let mut r_xz = vec![0.0; n];
    let mut r_ws = vec![0.0; n];
    for &j in problem.idx_nonneg.iter().chain(&problem.idx_box) {
        r_xz[j] = -state.x[j] * state.z[j];
    }
    for &j in &problem.idx_box {
        r_ws[j] = -state.w[j] * state.s[j];
    }
    NewtonRhs { r_d, r_p, r_u: res.r_u.clone(), r_xz, r_ws }
}

/// Corrector right-hand side: pure centering plus second-order correction.
fn corrector_rhs(problem: &QpProblem, dir_aff: &Direction, mu_target: f64) -> NewtonRhs {
    let n = problem.n();
    let m = problem.m();
    let mut r_xz = vec![0.0; n];
    let mut r_ws = vec![0.0; n];
    for &j in problem.idx_nonneg.iter().chain(&problem.idx_box) {
        r_xz[j] = mu_target - dir_aff.dx[j] * dir_aff.dz[j];
    }
    for &j in &problem.idx_box {
        r_ws[j] = mu_target - dir_aff.dw[j] * dir_aff.ds[j];
    }
    NewtonRhs { r_d: vec![0.0; n], r_p: vec![0.0; m], r_u: vec![0.0; n], r_xz, r_ws }
}

/// Fallback right-hand side: full residuals like the predictor, but
/// complementarity aims at `mu_target` instead of zero and carries no
/// second-order term.
fn centering_rhs(
    problem: &QpProblem,
    state: &IterateState,
    params: &PmmParams,
    res: &Residuals,
    mu_target: f64,
) -> NewtonRhs {
    let mut rhs = predictor_rhs(problem, state, params, res);
    for &j in problem.idx_nonneg.iter().chain(&problem.idx_box) {
        rhs.r_xz[j] += mu_target;
    }
    for &j in &problem.idx_box {
        rhs.r_ws[j] += mu_target;
    }
    rhs
}

/// Reduce one five-block Newton system to the normal equations, solve with
/// preconditioned CG, and recover the full direction in closed form.
///
/// Elimination: with `d_reg = Q_diag + theta_inv + rho` the auxiliary vector
/// gathers the complementarity blocks,
/// `xi_au_j = 0 | -r_xz_j / x_j | -r_xz_j / x_j + r_ws_j / w_j - s_j r_u_j / w_j`,
/// and the reduced right-hand side is `xi = r_p + A d_reg^-1 (r_d + xi_au)`.
/// After `N_delta dy = xi`:
///
/// ```text
/// dx = d_reg^-1 (A' dy - r_d - xi_au)
/// dw_J = r_u - dx             dz_IJ = (r_xz - z . dx) / x
/// ds_J = (r_ws - s . dw) / w
/// ```
///
/// If CG stops short of tolerance it retries once, warm-started, with four
/// times the iteration budget; persistent failure is an error so the caller
/// can escalate regularization.
#[allow(clippy::too_many_arguments)]
fn solve_newton(
    problem: &QpProblem,
    state: &IterateState,
    n_op: &NormalEqOp,
    precond: &dyn Preconditioner,
    rhs: &NewtonRhs,
    pcg_cfg: &PcgConfig,
    pcg_secs: &mut f64,
) -> Result<(Direction, PcgResult), Error> {
    let n = problem.n();
    let m = problem.m();

    let mut xi_au = vec![0.0; n];
    for &j in &problem.idx_nonneg {
        xi_au[j] = -rhs.r_xz[j] / state.x[j];
    }
    for &j in &problem.idx_box {
        xi_au[j] = -rhs.r_xz[j] / state.x[j] + rhs.r_ws[j] / state.w[j]
            - state.s[j] * rhs.r_u[j] / state.w[j];
    }

    let mut t = vec![0.0; n];
    for j in 0..n {
        t[j] = rhs.r_d[j] + xi_au[j];
    }
    let mut t_scaled = vec![0.0; n];
    n_op.scale_into(&t, &mut t_scaled);
    let mut xi = vec![0.0; m];
    n_op.a().apply_into(&t_scaled, &mut xi);
    for i in 0..m {
        xi[i] += rhs.r_p[i];
    }

    let started = Instant::now();
    let mut pcg = pcg_solve(n_op, &xi, precond, pcg_cfg, None)?;
    if !pcg.converged {
        log::warn!(
            "normal-equation CG stopped at residual {:.3e} after {} iterations; \
             retrying warm-started with a 4x budget",
            pcg.final_residual_norm,
            pcg.iters
        );
        let retry_cfg = PcgConfig { max_iters: pcg_cfg.max_iters.saturating_mul(4), ..*pcg_cfg };
        pcg = pcg_solve(n_op, &xi, precond, &retry_cfg, Some(&pcg.solution))?;
        if !pcg.converged {
            *pcg_secs += started.elapsed().as_secs_f64();
            return Err(Error::NumericalFailure(format!(
                "normal-equation CG failed to reach {:.3e} (residual {:.3e} after retry)",
                pcg_cfg.abs_tol, pcg.final_residual_norm
            )));
        }
    }
    *pcg_secs += started.elapsed().as_secs_f64();

    let dy = pcg.solution.clone();
    let mut aty = vec![0.0; n];
    n_op.a().apply_adjoint_into(&dy, &mut aty);
    let mut dx = vec![0.0; n];
    for j in 0..n {
        dx[j] = aty[j] - rhs.r_d[j] - xi_au[j];
    }
    let dx_copy = dx.clone();
    n_op.scale_into(&dx_copy, &mut dx);

    let mut dz = vec![0.0; n];
    let mut dw = vec![0.0; n];
    let mut ds = vec![0.0; n];
    for &j in problem.idx_nonneg.iter().chain(&problem.idx_box) {
        dz[j] = (rhs.r_xz[j] - state.z[j] * dx[j]) / state.x[j];
    }
    for &j in &problem.idx_box {
        dw[j] = rhs.r_u[j] - dx[j];
        ds[j] = (rhs.r_ws[j] - state.s[j] * dw[j]) / state.w[j];
    }

    Ok((Direction { dx, dy, dz, dw, ds }, pcg))
}

/// Why a predictor-corrector attempt was rejected.
enum Stall {
    StepUnderflow(f64),
    MuNotDecreasing { before: f64, best: f64 },
    PcgFailure(String),
}

impl Stall {
    fn describe(&self) -> String {
        match self {
            Stall::StepUnderflow(a) => format!("step size underflow (alpha = {a:.3e})"),
            Stall::MuNotDecreasing { before, best } => {
                format!("duality measure did not decrease (best trial {best:.3e} vs {before:.3e})")
            }
            Stall::PcgFailure(msg) => msg.clone(),
        }
    }
}

struct StepAccepted {
    state: IterateState,
    alpha_p: f64,
    alpha_d: f64,
    pcg_pred: PcgResult,
    pcg_corr: PcgResult,
    pcg_center: Option<PcgResult>,
    pcg_secs: f64,
}

/// Steps as far along `dir` as the boundary allows, then retreats to
/// equalized, halving stepsizes until the duality measure strictly drops.
/// `Err` carries the best measure any trial achieved.
fn mu_descent_step(
    problem: &QpProblem,
    state: &IterateState,
    dir: &Direction,
    alpha_p_full: f64,
    alpha_d_full: f64,
    positivity_violations: &mut u64,
) -> Result<(IterateState, f64, f64), f64> {
    let mu = state.mu;
    let mut best = f64::INFINITY;
    let mut next = state.clone();
    advance(problem, &mut next, dir, alpha_p_full, alpha_d_full);
    if positivity_ok(problem, &next) {
        next.mu = duality_measure(&next, problem);
        if problem.complementarity_pairs() == 0 || next.mu < mu {
            return Ok((next, alpha_p_full, alpha_d_full));
        }
        best = next.mu;
    } else {
        *positivity_violations += 1;
    }

    // The boundary step raised complementarity (typical when the primal and
    // dual blocking ratios are very different, so the lopsided cross terms
    // dominate). Equalizing the stepsizes removes those terms and halving
    // then finds a decreasing step whenever the direction has one;
    // positivity is monotone in the stepsize, so trials stay interior.
    let mut alpha = alpha_p_full.min(alpha_d_full);
    while alpha >= STEP_STALL_TOL {
        next = state.clone();
        advance(problem, &mut next, dir, alpha, alpha);
        if positivity_ok(problem, &next) {
            next.mu = duality_measure(&next, problem);
            if next.mu < mu {
                log::debug!(
                    "mu safeguard: equalized stepsizes at {alpha:.3e}, mu {mu:.3e} -> {:.3e}",
                    next.mu
                );
                return Ok((next, alpha, alpha));
            }
            best = best.min(next.mu);
        } else {
            *positivity_violations += 1;
        }
        alpha *= 0.5;
    }
    Err(best)
}

/// One predictor-corrector attempt at the current iterate. Both solves share
/// the preconditioner and tolerance; the corrector starts CG from zero.
#[allow(clippy::too_many_arguments)]
fn predictor_corrector_step(
    problem: &QpProblem,
    state: &IterateState,
    params: &PmmParams,
    res: &Residuals,
    n_op: &NormalEqOp,
    precond: &dyn Preconditioner,
    pcg_cfg: &PcgConfig,
    iter: usize,
    observer: &mut Option<&mut dyn NewtonObserver>,
    positivity_violations: &mut u64,
) -> Result<StepAccepted, Stall> {
    let mu = state.mu;
    let mut pcg_secs = 0.0;

    let rhs_pred = predictor_rhs(problem, state, params, res);
    let (dir_pred, pcg_pred) =
        match solve_newton(problem, state, n_op, precond, &rhs_pred, pcg_cfg, &mut pcg_secs) {
            Ok(v) => v,
            Err(e) => return Err(Stall::PcgFailure(e.to_string())),
        };
    if let Some(obs) = observer.as_deref_mut() {
        obs.on_newton(&NewtonContext {
            kind: NewtonKind::Predictor,
            iter,
            problem,
            state,
            params,
            rhs: &rhs_pred,
            direction: &dir_pred,
            pcg_tol: pcg_cfg.abs_tol,
            pcg: &pcg_pred,
        });
    }

    // Affine trial point and centering target mu_aff^3 / mu^2.
    let (alpha_p_aff, alpha_d_aff) = step_sizes(problem, state, &dir_pred);
    let mut trial = state.clone();
    advance(problem, &mut trial, &dir_pred, alpha_p_aff, alpha_d_aff);
    let mu_aff = duality_measure(&trial, problem);
    // Mehrotra's cubic rule, clamped below the current measure: with
    // asymmetric blocking the hypothetical measure can exceed mu, and a
    // centering target at or above mu would make every step along the
    // combined direction raise complementarity.
    let mu_target =
        if mu > 0.0 { (mu_aff * mu_aff * mu_aff / (mu * mu)).min(CENTERING_CAP * mu) } else { 0.0 };
    log::trace!(
        "predictor: mu {mu:.3e}, affine alphas ({alpha_p_aff:.3}, {alpha_d_aff:.3}), mu_aff \
         {mu_aff:.3e}, centering target {mu_target:.3e}"
    );

    let rhs_corr = corrector_rhs(problem, &dir_pred, mu_target);
    let (dir_corr, pcg_corr) =
        match solve_newton(problem, state, n_op, precond, &rhs_corr, pcg_cfg, &mut pcg_secs) {
            Ok(v) => v,
            Err(e) => return Err(Stall::PcgFailure(e.to_string())),
        };
    if let Some(obs) = observer.as_deref_mut() {
        obs.on_newton(&NewtonContext {
            kind: NewtonKind::Corrector,
            iter,
            problem,
            state,
            params,
            rhs: &rhs_corr,
            direction: &dir_corr,
            pcg_tol: pcg_cfg.abs_tol,
            pcg: &pcg_corr,
        });
    }

    let dir = Direction {
        dx: sum_vec(&dir_pred.dx, &dir_corr.dx),
        dy: sum_vec(&dir_pred.dy, &dir_corr.dy),
        dz: sum_vec(&dir_pred.dz, &dir_corr.dz),
        dw: sum_vec(&dir_pred.dw, &dir_corr.dw),
        ds: sum_vec(&dir_pred.ds, &dir_corr.ds),
    };

    let (alpha_p_full, alpha_d_full) = step_sizes(problem, state, &dir);
    if alpha_p_full.min(alpha_d_full) < STEP_STALL_TOL {
        return Err(Stall::StepUnderflow(alpha_p_full.min(alpha_d_full)));
    }

    if let Ok((next, alpha_p, alpha_d)) = mu_descent_step(
        problem,
        state,
        &dir,
        alpha_p_full,
        alpha_d_full,
        positivity_violations,
    ) {
        return Ok(StepAccepted {
            state: next,
            alpha_p,
            alpha_d,
            pcg_pred,
            pcg_corr,
            pcg_center: None,
            pcg_secs,
        });
    }

    // No fraction of the Mehrotra direction decreases the measure: its
    // second-order term, built from a blocked predictor at a badly
    // infeasible iterate, points away from the central path. Fall back to a
    // plain fixed-centering Newton direction, whose measure slope is
    // (sigma - 1) * mu < 0 under equal stepsizes no matter how infeasible
    // the iterate is, so the halving search below it cannot dead-end.
    let rhs_center = centering_rhs(problem, state, params, res, FALLBACK_CENTERING * mu);
    let (dir_center, pcg_center) =
        match solve_newton(problem, state, n_op, precond, &rhs_center, pcg_cfg, &mut pcg_secs) {
            Ok(v) => v,
            Err(e) => return Err(Stall::PcgFailure(e.to_string())),
        };
    if let Some(obs) = observer.as_deref_mut() {
        obs.on_newton(&NewtonContext {
            kind: NewtonKind::Centering,
            iter,
            problem,
            state,
            params,
            rhs: &rhs_center,
            direction: &dir_center,
            pcg_tol: pcg_cfg.abs_tol,
            pcg: &pcg_center,
        });
    }
    let (alpha_p_c, alpha_d_c) = step_sizes(problem, state, &dir_center);
    if alpha_p_c.min(alpha_d_c) < STEP_STALL_TOL {
        return Err(Stall::StepUnderflow(alpha_p_c.min(alpha_d_c)));
    }
    match mu_descent_step(problem, state, &dir_center, alpha_p_c, alpha_d_c, positivity_violations)
    {
        Ok((next, alpha_p, alpha_d)) => {
            log::debug!(
                "centering fallback accepted: mu {mu:.3e} -> {:.3e} at alpha ({alpha_p:.3e}, \
                 {alpha_d:.3e})",
                next.mu
            );
            Ok(StepAccepted {
                state: next,
                alpha_p,
                alpha_d,
                pcg_pred,
                pcg_corr,
                pcg_center: Some(pcg_center),
                pcg_secs,
            })
        }
        Err(best) => Err(Stall::MuNotDecreasing { before: mu, best }),
    }
}

fn sum_vec(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

/// `x, w += alpha_p * d; y, z, s += alpha_d * d`, preserving the zero padding.
fn advance(
    problem: &QpProblem,
    state: &mut IterateState,
    dir: &Direction,
    alpha_p: f64,
    alpha_d: f64,
) {
    for j in 0..problem.n() {
        state.x[j] += alpha_p * dir.dx[j];
        state.w[j] += alpha_p * dir.dw[j];
        state.z[j] += alpha_d * dir.dz[j];
        state.s[j] += alpha_d * dir.ds[j];
    }
    for i in 0..problem.m() {
        state.y[i] += alpha_d * dir.dy[i];
    }
    // The padded components move by exactly zero; re-zero them to keep the
    // invariants immune to float noise from the closed-form recovery.
    for &j in &problem.idx_free {
        state.z[j] = 0.0;
        state.w[j] = 0.0;
        state.s[j] = 0.0;
    }
    for &j in &problem.idx_nonneg {
        state.w[j] = 0.0;
        state.s[j] = 0.0;
    }
}

fn positivity_ok(problem: &QpProblem, state: &IterateState) -> bool {
    for &j in problem.idx_nonneg.iter().chain(&problem.idx_box) {
        if !(state.x[j] > 0.0 && state.z[j] > 0.0) {
            return false;
        }
    }
    for &j in &problem.idx_box {
        if !(state.w[j] > 0.0 && state.s[j] > 0.0) {
            return false;
        }
    }
    true
}

/// Derive the sketch seed for outer iteration `k` from the base seed.
fn sketch_seed(base: u64, iter: usize) -> u64 {
    // SplitMix64 finalizer: decorrelates consecutive iterations while staying
    // reproducible for a fixed base seed.
    let mut z = base ^ (iter as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

enum BuiltPreconditioner {
    Identity(IdentityPreconditioner),
    Nystrom(crate::nystrom::NystromPreconditioner),
    PartialCholesky(crate::partial_cholesky::PartialCholeskyFactors),
}

impl BuiltPreconditioner {
    fn as_dyn(&self) -> &dyn Preconditioner {
        match self {
            BuiltPreconditioner::Identity(p) => p,
            BuiltPreconditioner::Nystrom(p) => p,
            BuiltPreconditioner::PartialCholesky(p) => p,
        }
    }

    fn rank(&self) -> usize {
        match self {
            BuiltPreconditioner::Identity(_) => 0,
            BuiltPreconditioner::Nystrom(p) => p.factors.rank(),
            BuiltPreconditioner::PartialCholesky(p) => p.rank(),
        }
    }
}

/// Build the configured preconditioner for the current normal matrix.
///
/// The Nystrom sketch targets the unshifted `A D^-1 A'` (the shift is added
/// back analytically); partial Cholesky factors the shifted matrix directly.
fn build_preconditioner(
    kind: PreconditionerKind,
    a: &Arc<dyn LinearOperator>,
    d_reg: &[f64],
    delta: f64,
    rank: usize,
    seed: u64,
) -> Result<BuiltPreconditioner, Error> {
    match kind {
        PreconditionerKind::None => Ok(BuiltPreconditioner::Identity(IdentityPreconditioner)),
        PreconditionerKind::Nystrom { .. } => {
            let pure = NormalEqOp::from_d_reg(a.clone(), d_reg, 0.0)?;
            let factors = nystrom_approximation(&pure, rank, seed)?;
            Ok(BuiltPreconditioner::Nystrom(build_nystrom_preconditioner(factors, delta)?))
        }
        PreconditionerKind::PartialCholesky { .. } => {
            let factors = build_partial_cholesky(a.clone(), d_reg, delta, rank)?;
            Ok(BuiltPreconditioner::PartialCholesky(factors))
        }
    }
}

/// Least-squares starting point.
///
/// Two ridge-regularized least-squares problems (`A A' + 10 I`, solved with
/// Nystrom-preconditioned CG) give
///
/// ```text
/// x~ = u/2 + A' (A A' + 10 I)^-1 (b - A u / 2)
/// y~ = (A A' + 10 I)^-1 A (c + Q x~)
/// z~ = c - A' y~ + Q x~   (halved on the boxed set)
/// s~_J = -z~_J            w~_J = u_J - x~_J
/// ```
///
/// then shifts the bounded components to strict positivity with the usual
/// balance heuristic. If the heuristic degenerates (empty or non-finite
/// shifts), falls back to ones on all bounded components.
fn initial_point(
    problem: &QpProblem,
    a: &Arc<dyn LinearOperator>,
    config: &SolverConfig,
) -> Result<IterateState, Error> {
    let n = problem.n();
    let m = problem.m();
    let ones = vec![1.0; n];
    let ridge_op = NormalEqOp::from_d_reg(a.clone(), &ones, STARTING_POINT_RIDGE)?;

    let init_rank = match config.preconditioner {
        PreconditionerKind::Nystrom { rank } | PreconditionerKind::PartialCholesky { rank } => {
            rank.min(m.max(1)).min(20)
        }
        PreconditionerKind::None => 20.min(m.max(1)),
    };
    let precond = if m > 0 {
        match build_preconditioner(
            PreconditionerKind::Nystrom { rank: init_rank },
            a,
            &ones,
            STARTING_POINT_RIDGE,
            init_rank,
            sketch_seed(config.rng_seed, usize::MAX),
        ) {
            Ok(p) => p,
            Err(e) => {
                log::warn!("starting-point sketch failed ({e}); using plain CG");
                BuiltPreconditioner::Identity(IdentityPreconditioner)
            }
        }
    } else {
        BuiltPreconditioner::Identity(IdentityPreconditioner)
    };
    let pcg_cfg = PcgConfig {
        abs_tol: config.inexact_floor.max(1e-10),
        max_iters: config.pcg.max_iters.max(200),
        report_every: 0,
    };

    // x~ = u/2 + A' t, t from (A A' + 10 I) t = b - A u/2.
    let mut half_u = vec![0.0; n];
    for &j in &problem.idx_box {
        half_u[j] = 0.5 * problem.u[j];
    }
    let mut rhs1 = a.apply(&half_u);
    for i in 0..m {
        rhs1[i] = problem.b[i] - rhs1[i];
    }
    let t = pcg_solve(&ridge_op, &rhs1, precond.as_dyn(), &pcg_cfg, None)?;
    let mut x_tilde = a.apply_adjoint(&t.solution);
    for j in 0..n {
        x_tilde[j] += half_u[j];
    }

    // y~ from (A A' + 10 I) y = A (c + Q x~).
    let mut grad = vec![0.0; n];
    for j in 0..n {
        grad[j] = problem.c[j] + problem.q_diag[j] * x_tilde[j];
    }
    let rhs2 = a.apply(&grad);
    let t2 = pcg_solve(&ridge_op, &rhs2, precond.as_dyn(), &pcg_cfg, None)?;
    let y_tilde = t2.solution;

    // z~ = c - A' y~ + Q x~, halved on the boxed set; s~_J = -z~_J.
    let aty = a.apply_adjoint(&y_tilde);
    let mut z_tilde = vec![0.0; n];
    for j in 0..n {
        z_tilde[j] = grad[j] - aty[j];
    }
    for &j in &problem.idx_box {
        z_tilde[j] *= 0.5;
    }
    let mut s_tilde = vec![0.0; n];
    let mut w_tilde = vec![0.0; n];
    for &j in &problem.idx_box {
        s_tilde[j] = -z_tilde[j];
        w_tilde[j] = problem.u[j] - x_tilde[j];
    }

    let bounded: Vec<usize> =
        problem.idx_nonneg.iter().chain(&problem.idx_box).copied().collect();
    let boxed = &problem.idx_box;

    let mut state = IterateState {
        x: x_tilde.clone(),
        y: if all_finite(&y_tilde) { y_tilde } else { vec![0.0; m] },
        z: vec![0.0; n],
        w: vec![0.0; n],
        s: vec![0.0; n],
        mu: 0.0,
    };
    if !all_finite(&state.x) {
        log::warn!("starting-point least squares produced non-finite x; resetting to zero");
        state.x = vec![0.0; n];
        for &j in boxed {
            state.x[j] = 0.5 * problem.u[j];
        }
        x_tilde = state.x.clone();
        for &j in boxed {
            w_tilde[j] = problem.u[j] - x_tilde[j];
        }
    }
    if bounded.is_empty() {
        return Ok(state);
    }

    // Positivity shifts: delta_p covers x (and w), delta_d covers z (and s).
    let min_primal = bounded
        .iter()
        .map(|&j| x_tilde[j])
        .chain(boxed.iter().map(|&j| w_tilde[j]))
        .fold(f64::INFINITY, f64::min);
    let min_dual = bounded
        .iter()
        .map(|&j| z_tilde[j])
        .chain(boxed.iter().map(|&j| s_tilde[j]))
        .fold(f64::INFINITY, f64::min);
    let delta_p = (-1.5 * min_primal).max(0.0);
    let delta_d = (-1.5 * min_dual).max(0.0);

    let mut gamma = 0.0;
    for &j in &bounded {
        gamma += (x_tilde[j] + delta_p) * (z_tilde[j] + delta_d);
    }
    for &j in boxed {
        gamma += (w_tilde[j] + delta_p) * (s_tilde[j] + delta_d);
    }
    let denom_p: f64 = bounded.iter().map(|&j| z_tilde[j] + delta_d).sum::<f64>()
        + boxed.iter().map(|&j| s_tilde[j] + delta_d).sum::<f64>();
    let denom_d: f64 = bounded.iter().map(|&j| x_tilde[j] + delta_p).sum::<f64>()
        + boxed.iter().map(|&j| w_tilde[j] + delta_p).sum::<f64>();

    let mut ok = denom_p.is_finite() && denom_d.is_finite() && denom_p > 0.0 && denom_d > 0.0;
    if ok {
        let shift_p = delta_p + 0.5 * gamma / denom_p;
        let shift_d = delta_d + 0.5 * gamma / denom_d;
        ok = shift_p.is_finite() && shift_d.is_finite();
        if ok {
            for &j in &bounded {
                state.x[j] = x_tilde[j] + shift_p;
                state.z[j] = z_tilde[j] + shift_d;
                ok &= state.x[j] > 0.0 && state.z[j] > 0.0;
            }
            for &j in boxed {
                state.w[j] = w_tilde[j] + shift_p;
                state.s[j] = s_tilde[j] + shift_d;
                ok &= state.w[j] > 0.0 && state.s[j] > 0.0;
            }
        }
    }
    if !ok {
        log::warn!("balanced starting point degenerated; falling back to unit interior point");
        for &j in &bounded {
            state.x[j] = 1.0;
            state.z[j] = 1.0;
        }
        for &j in boxed {
            state.w[j] = 1.0;
            state.s[j] = 1.0;
        }
    }
    state.mu = duality_measure(&state, problem);
    Ok(state)
}

/// Validate configuration knobs that the solver relies on.
fn validate_config(config: &SolverConfig, m: usize) -> Result<usize, Error> {
    if !(config.tol > 0.0 && config.tol.is_finite()) {
        return Err(Error::InvalidParameter(format!("tol must be positive, got {}", config.tol)));
    }
    if config.max_outer == 0 {
        return Err(Error::InvalidParameter("max_outer must be at least 1".into()));
    }
    if !(config.inexact_c > 0.0 && config.inexact_floor > 0.0) {
        return Err(Error::InvalidParameter(
            "inexact tolerance constants must be positive".into(),
        ));
    }
    if !(config.rho0 >= PMM_REG_FLOOR && config.delta0 >= PMM_REG_FLOOR) {
        return Err(Error::InvalidParameter(format!(
            "initial regularization must be at least {PMM_REG_FLOOR:e}"
        )));
    }
    let rank = match config.preconditioner {
        PreconditionerKind::None => 0,
        PreconditionerKind::Nystrom { rank } | PreconditionerKind::PartialCholesky { rank } => {
            if rank == 0 {
                return Err(Error::InvalidParameter("preconditioner rank must be >= 1".into()));
            }
            if rank > m {
                log::warn!("preconditioner rank {rank} exceeds m = {m}; clamping");
            }
            rank.min(m)
        }
    };
    Ok(rank)
}

/// Solve the QP. See the module docs for the algorithm outline.
pub fn solve(problem: &QpProblem, config: &SolverConfig) -> Result<SolveReport, Error> {
    solve_with_observer(problem, config, None)
}

/// [`solve`] with a hook invoked after every Newton solve.
pub fn solve_with_observer(
    problem: &QpProblem,
    config: &SolverConfig,
    mut observer: Option<&mut dyn NewtonObserver>,
) -> Result<SolveReport, Error> {
    problem.validate().map_err(Error::InvalidProblem)?;
    let mut rank = validate_config(config, problem.m())?;

    // Count every A / A' product from here on.
    let counter = MatvecCounter::new();
    let counted: Arc<dyn LinearOperator> =
        Arc::new(CountedOp::new(problem.a.clone(), counter.clone()));
    let mut problem = problem.clone();
    problem.a = counted.clone();
    let problem = &problem;

    let n = problem.n();
    let m = problem.m();

    let mut state = initial_point(problem, &counted, config)?;
    let matvecs_initial_point = counter.total();
    let mut params = PmmParams {
        delta: config.delta0,
        rho: config.rho0,
        lambda_est: state.y.clone(),
        zeta_est: state.x.clone(),
    };
    let mu0 = if state.mu > 0.0 { state.mu } else { 1.0 };

    let pure_equality = problem.complementarity_pairs() == 0;
    if pure_equality {
        log::info!("no bounded variables; running regularized equality path");
    }

    let mut records: Vec<IterationRecord> = Vec::new();
    let mut snapshots: Vec<StageSnapshot> = Vec::new();
    let mut stages_pending: Vec<f64> = config.stage_snapshots.clone();
    stages_pending.sort_by(|a, b| b.partial_cmp(a).unwrap_or(std::cmp::Ordering::Equal));
    let mut escalations = 0usize;
    let mut consecutive_stalls = 0usize;
    let mut positivity_violations = 0u64;
    let mut max_alpha = 0.0f64;
    let mut matvecs_at_last_record = counter.total();
    let status: SolveStatus;
    let mut status_detail = String::new();
    let mut accepted = 0usize;

    loop {
        let iter_started = Instant::now();
        let res = compute_residuals(problem, &state);
        let mu = state.mu;

        while let Some(&stage) = stages_pending.first() {
            if res.rel_p <= stage && res.rel_d <= stage && res.rel_u <= stage && mu <= stage {
                snapshots.push(StageSnapshot {
                    stage,
                    iter: accepted,
                    theta_inv: theta_inverse(problem, &state),
                    rho: params.rho,
                    delta: params.delta,
                });
                stages_pending.remove(0);
            } else {
                break;
            }
        }

        if check_termination(&res, mu, config.tol) {
            status = SolveStatus::Optimal;
            break;
        }
        if accepted >= config.max_outer {
            status = SolveStatus::IterationLimit;
            status_detail = format!("no convergence within {} outer iterations", config.max_outer);
            break;
        }

        // Assemble this iteration's normal operator and preconditioner.
        let theta_inv = if pure_equality { vec![0.0; n] } else { theta_inverse(problem, &state) };
        let mut d_reg = vec![0.0; n];
        for j in 0..n {
            d_reg[j] = problem.q_diag[j] + theta_inv[j] + params.rho;
        }
        let n_op = NormalEqOp::from_d_reg(counted.clone(), &d_reg, params.delta)?;

        let precond_started = Instant::now();
        let matvecs_before_precond = counter.total();
        let precond =
            match build_preconditioner(
                config.preconditioner,
                &counted,
                &d_reg,
                params.delta,
                rank.max(1),
                sketch_seed(config.rng_seed, accepted),
            ) {
                Ok(p) => p,
                Err(e) => {
                    log::warn!("preconditioner build failed ({e}); using identity");
                    BuiltPreconditioner::Identity(IdentityPreconditioner)
                }
            };
        let matvecs_precond = counter.total() - matvecs_before_precond;
        let precond_build_secs = precond_started.elapsed().as_secs_f64();

        let pcg_tol =
            residual_tolerance_schedule(mu.max(0.0), mu0, config.inexact_floor, config.inexact_c);
        let pcg_cfg = PcgConfig { abs_tol: pcg_tol, ..config.pcg };

        let matvecs_before_pcg = counter.total();
        let outcome = if pure_equality {
            equality_step(problem, &state, &params, &res, &n_op, precond.as_dyn(), &pcg_cfg)
        } else {
            predictor_corrector_step(
                problem,
                &state,
                &params,
                &res,
                &n_op,
                precond.as_dyn(),
                &pcg_cfg,
                accepted,
                &mut observer,
                &mut positivity_violations,
            )
        };
        let matvecs_pcg = counter.total() - matvecs_before_pcg;

        match outcome {
            Ok(step) => {
                let mu_new = step.state.mu;
                // The record shows the weights this iteration's Newton
                // systems actually used, so capture before the update.
                let rho_used = params.rho;
                let delta_used = params.delta;
                let res_new = compute_residuals(problem, &step.state);
                let mu_ratio = if mu > 0.0 { mu_new / mu } else { 0.0 };
                update_pmm_params(&mut params, &step.state, &res, &res_new, mu_ratio);
                max_alpha = max_alpha.max(step.alpha_p).max(step.alpha_d);
                escalations = 0;
                consecutive_stalls = 0;

                let matvecs_total_iter = counter.total() - matvecs_at_last_record;
                matvecs_at_last_record = counter.total();
                records.push(IterationRecord {
                    iter: accepted,
                    mu,
                    rel_p: res.rel_p,
                    rel_d: res.rel_d,
                    rel_u: res.rel_u,
                    rho: rho_used,
                    delta: delta_used,
                    rank: precond.rank(),
                    pcg_iters_predictor: step.pcg_pred.iters,
                    pcg_iters_corrector: step.pcg_corr.iters,
                    pcg_iters_centering: step.pcg_center.as_ref().map_or(0, |p| p.iters),
                    matvecs_precond,
                    matvecs_pcg,
                    matvecs_total: matvecs_total_iter,
                    precond_build_secs,
                    pcg_secs: step.pcg_secs,
                    total_secs: iter_started.elapsed().as_secs_f64(),
                    alpha_p: step.alpha_p,
                    alpha_d: step.alpha_d,
                });
                log::debug!(
                    "iter {accepted}: mu {mu:.3e} -> {mu_new:.3e}, rel_p {:.3e}, rel_d {:.3e}, \
                     pcg {}+{}",
                    res.rel_p,
                    res.rel_d,
                    step.pcg_pred.iters,
                    step.pcg_corr.iters
                );
                state = step.state;
                accepted += 1;

                if config.adaptive_rank {
                    if let PreconditionerKind::Nystrom { .. } = config.preconditioner {
                        let spent = records.last().map_or(0, |r| {
                            r.pcg_iters_predictor + r.pcg_iters_corrector + r.pcg_iters_centering
                        });
                        if spent > config.adaptive_budget && rank < m {
                            let new_rank = (rank * 2).min(m);
                            log::info!(
                                "adaptive sketch size: {rank} -> {new_rank} after {spent} CG \
                                 iterations"
                            );
                            rank = new_rank;
                        }
                    }
                }
            }
            Err(stall) => {
                // Re-regularize and retry: larger weights perturb the Newton
                // system toward the proximal anchors, which recenters an
                // iterate whose complementarity converged ahead of
                // feasibility. The counter resets on every accepted step.
                consecutive_stalls += 1;
                if escalations >= MAX_STALL_ESCALATIONS
                    || consecutive_stalls > MAX_CONSECUTIVE_STALLS
                {
                    status = SolveStatus::NumericalFailure;
                    status_detail = format!(
                        "{} after {} regularization escalations",
                        stall.describe(),
                        escalations
                    );
                    break;
                }
                escalations += 1;
                params.rho = (params.rho * STALL_ESCALATION).min(config.rho0);
                params.delta = (params.delta * STALL_ESCALATION).min(config.delta0);
                log::debug!(
                    "stalled ({}); escalation {}/{}: rho = {:.3e}, delta = {:.3e}",
                    stall.describe(),
                    escalations,
                    MAX_STALL_ESCALATIONS,
                    params.rho,
                    params.delta
                );
            }
        }
    }

    let residuals = compute_residuals(problem, &state);
    let objective = objective_value(problem, &state.x);
    let matvecs_total = counter.total();
    let matvecs_tail = matvecs_total
        - matvecs_initial_point
        - records.iter().map(|r| r.matvecs_total).sum::<u64>();
    Ok(SolveReport {
        status,
        status_detail,
        outer_iters: accepted,
        records,
        state,
        residuals,
        objective,
        matvecs_initial_point,
        matvecs_tail,
        matvecs_total,
        positivity_violations,
        max_alpha,
        snapshots,
    })
}

/// Newton correction for problems with no bounded variables: solve the
/// regularized normal equations once and take the full step.
fn equality_step(
    problem: &QpProblem,
    state: &IterateState,
    params: &PmmParams,
    res: &Residuals,
    n_op: &NormalEqOp,
    precond: &dyn Preconditioner,
    pcg_cfg: &PcgConfig,
) -> Result<StepAccepted, Stall> {
    let mut pcg_secs = 0.0;
    let rhs = predictor_rhs(problem, state, params, res);
    let (dir, pcg) =
        match solve_newton(problem, state, n_op, precond, &rhs, pcg_cfg, &mut pcg_secs) {
            Ok(v) => v,
            Err(e) => return Err(Stall::PcgFailure(e.to_string())),
        };
    let mut next = state.clone();
    advance(problem, &mut next, &dir, 1.0, 1.0);
    next.mu = 0.0;
    let empty = PcgResult {
        solution: Vec::new(),
        iters: 0,
        final_residual_norm: 0.0,
        converged: true,
    };
    Ok(StepAccepted {
        state: next,
        alpha_p: 1.0,
        alpha_d: 1.0,
        pcg_pred: pcg,
        pcg_corr: empty,
        pcg_center: None,
        pcg_secs,
    })
}
