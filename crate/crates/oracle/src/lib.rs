//! Desk-scale dense ground-truth engines for validating the matrix-free
//! solver: brute-force active-set enumeration, dense condition numbers of
//! (preconditioned) operators, dense residuals of the full five-block
//! Newton system, and a seeded generator of small mixed-bound QPs.
//!
//! Everything here densifies its inputs, so sizes are capped at a few
//! hundred. Nothing in the production solver depends on this crate; it
//! exists for tests, acceptance gates, and offline studies.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::sync::Arc;

use nysqp::ippmm::{Direction, NewtonRhs};
use nysqp::linops::{DenseOp, LinearOperator};
use nysqp::pcg::Preconditioner;
use nysqp::qp_model::{objective_value, IterateState, QpProblem};
use nysqp::Error;

/// Slack allowed on multiplier signs when certifying a candidate; keeps
/// degenerate optima from being rejected for roundoff-size negativity.
const SIGN_TOL: f64 = 1e-9;

/// Largest KKT defect a candidate may carry and still count as certified.
/// Dense LU happily returns garbage for singular reduced systems (rank
/// deficient `A` on the free block), so sign checks alone are not enough.
const CERT_TOL: f64 = 1e-8;

/// Hard cap on enumeration work (KKT solves per call).
const MAX_ASSIGNMENTS: u64 = 1 << 24;

/// Materializes an operator column by column.
pub fn densify(op: &dyn LinearOperator) -> DMatrix<f64> {
    let (m, n) = (op.rows(), op.cols());
    let mut basis = vec![0.0; n];
    let mut out = DMatrix::zeros(m, n);
    let mut col = vec![0.0; m];
    for j in 0..n {
        basis[j] = 1.0;
        op.apply_into(&basis, &mut col);
        basis[j] = 0.0;
        for i in 0..m {
            out[(i, j)] = col[i];
        }
    }
    out
}

/// A dense, certified QP solution in the solver's variable convention:
/// `z`, `w`, `s` are full length, zero off the sets they live on.
#[derive(Clone, Debug)]
pub struct DenseQpSolution {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub z: Vec<f64>,
    pub w: Vec<f64>,
    pub s: Vec<f64>,
    pub objective: f64,
    /// Largest infinity-norm defect across primal feasibility, stationarity,
    /// box linking, complementarity products, and sign conditions.
    pub kkt_residual: f64,
}

/// Per-variable role inside one enumeration assignment.
#[derive(Clone, Copy, PartialEq, Eq)]
enum BoundState {
    Interior,
    Lower,
    Upper,
}

/// Brute-force global solve by enumerating active sets.
///
/// Every bounded variable is assigned to {lower-active, interior} (plus
/// {upper-active} for boxed ones); for each assignment the remaining
/// equality-constrained KKT system is solved densely, candidates with
/// feasible interiors and correctly signed multipliers are kept, and the
/// minimum-objective candidate wins. Ties are broken toward the
/// lexicographically smallest assignment vector, so the result is
/// deterministic.
pub fn enumerate_active_sets(problem: &QpProblem) -> Result<DenseQpSolution, Error> {
    let n = problem.n();
    let m = problem.m();
    let bounded: Vec<usize> =
        problem.idx_nonneg.iter().chain(&problem.idx_box).copied().collect();
    assert!(
        bounded.len() <= 24,
        "active-set enumeration supports at most 24 bounded variables, got {}",
        bounded.len()
    );
    let is_boxed: Vec<bool> = {
        let mut v = vec![false; n];
        for &j in &problem.idx_box {
            v[j] = true;
        }
        v
    };
    let states_per_var: Vec<u64> =
        bounded.iter().map(|&j| if is_boxed[j] { 3 } else { 2 }).collect();
    let total: u64 = states_per_var.iter().product();
    if total > MAX_ASSIGNMENTS {
        return Err(Error::InvalidParameter(format!(
            "active-set enumeration would need {total} KKT solves (cap {MAX_ASSIGNMENTS})"
        )));
    }

    let a_dense = densify(problem.a.as_ref());
    let mut best: Option<(f64, Vec<BoundState>, DenseQpSolution)> = None;

    let mut assignment = vec![BoundState::Interior; bounded.len()];
    for code in 0..total {
        // Mixed-radix decode: digit k picks the state of bounded var k.
        let mut rem = code;
        for (k, &radix) in states_per_var.iter().enumerate() {
            assignment[k] = match rem % radix {
                0 => BoundState::Interior,
                1 => BoundState::Lower,
                _ => BoundState::Upper,
            };
            rem /= radix;
        }
        let Some(candidate) = solve_assignment(problem, &a_dense, &bounded, &assignment) else {
            continue;
        };
        let better = match &best {
            None => true,
            Some((obj, assign, _)) => {
                candidate.objective < obj - 1e-12
                    || (candidate.objective <= obj + 1e-12 && lex_less(&assignment, assign))
            }
        };
        if better {
            best = Some((candidate.objective, assignment.clone(), candidate));
        }
    }

    match best {
        Some((_, _, solution)) => Ok(solution),
        None => Err(Error::NumericalFailure(format!(
            "active-set enumeration found no feasible stationary candidate \
             in {total} assignments over {m} equality rows; \
             the instance is likely infeasible"
        ))),
    }
}

fn lex_less(a: &[BoundState], b: &[BoundState]) -> bool {
    let rank = |s: &BoundState| match s {
        BoundState::Interior => 0u8,
        BoundState::Lower => 1,
        BoundState::Upper => 2,
    };
    a.iter().map(&rank).lt(b.iter().map(&rank))
}

/// Solves one equality-KKT system for a fixed assignment and certifies it.
fn solve_assignment(
    problem: &QpProblem,
    a_dense: &DMatrix<f64>,
    bounded: &[usize],
    assignment: &[BoundState],
) -> Option<DenseQpSolution> {
    let n = problem.n();
    let m = problem.m();
    let mut fixed_value = vec![f64::NAN; n]; // NaN marks an unfixed variable
    for (k, &j) in bounded.iter().enumerate() {
        match assignment[k] {
            BoundState::Interior => {}
            BoundState::Lower => fixed_value[j] = 0.0,
            BoundState::Upper => fixed_value[j] = problem.u[j],
        }
    }
    let free_cols: Vec<usize> = (0..n).filter(|&j| fixed_value[j].is_nan()).collect();
    let nf = free_cols.len();

    // [ diag(q_f)  -A_f' ] [x_f]   [ -c_f        ]
    // [ A_f         0    ] [ y ] = [ b - A x_fix ]
    let dim = nf + m;
    let mut k_mat = DMatrix::zeros(dim, dim);
    let mut rhs = DVector::zeros(dim);
    for (col, &j) in free_cols.iter().enumerate() {
        k_mat[(col, col)] = problem.q_diag[j];
        for i in 0..m {
            k_mat[(col, nf + i)] = -a_dense[(i, j)];
            k_mat[(nf + i, col)] = a_dense[(i, j)];
        }
        rhs[col] = -problem.c[j];
    }
    for i in 0..m {
        let mut ax_fixed = 0.0;
        for j in 0..n {
            if !fixed_value[j].is_nan() {
                ax_fixed += a_dense[(i, j)] * fixed_value[j];
            }
        }
        rhs[nf + i] = problem.b[i] - ax_fixed;
    }
    let sol = k_mat.lu().solve(&rhs)?;
    if sol.iter().any(|v| !v.is_finite()) {
        return None;
    }

    let mut x = vec![0.0; n];
    for j in 0..n {
        if !fixed_value[j].is_nan() {
            x[j] = fixed_value[j];
        }
    }
    for (col, &j) in free_cols.iter().enumerate() {
        x[j] = sol[col];
    }
    let y: Vec<f64> = (0..m).map(|i| sol[nf + i]).collect();

    // Reduced gradient g = Qx + c - A'y; actives read multipliers off it,
    // interiors must sit strictly inside their bounds.
    let mut g = vec![0.0; n];
    for j in 0..n {
        let aty: f64 = (0..m).map(|i| a_dense[(i, j)] * y[i]).sum();
        g[j] = problem.q_diag[j] * x[j] + problem.c[j] - aty;
    }
    let mut z = vec![0.0; n];
    let mut w = vec![0.0; n];
    let mut s = vec![0.0; n];
    for (k, &j) in bounded.iter().enumerate() {
        match assignment[k] {
            BoundState::Interior => {
                if x[j] < -SIGN_TOL {
                    return None;
                }
                if problem.u[j] > 0.0 && x[j] > problem.u[j] + SIGN_TOL {
                    return None;
                }
            }
            BoundState::Lower => {
                if g[j] < -SIGN_TOL {
                    return None;
                }
                z[j] = g[j].max(0.0);
            }
            BoundState::Upper => {
                if -g[j] < -SIGN_TOL {
                    return None;
                }
                s[j] = (-g[j]).max(0.0);
            }
        }
    }
    for &j in &problem.idx_box {
        w[j] = problem.u[j] - x[j];
        if w[j] < -SIGN_TOL {
            return None;
        }
        w[j] = w[j].max(0.0);
    }

    let objective = objective_value(problem, &x);
    let kkt_residual = kkt_defect(problem, a_dense, &x, &y, &z, &w, &s);
    if kkt_residual > CERT_TOL {
        return None;
    }
    Some(DenseQpSolution { x, y, z, w, s, objective, kkt_residual })
}

/// Infinity-norm KKT defect of a candidate in the solver's convention.
fn kkt_defect(
    problem: &QpProblem,
    a_dense: &DMatrix<f64>,
    x: &[f64],
    y: &[f64],
    z: &[f64],
    w: &[f64],
    s: &[f64],
) -> f64 {
    let n = problem.n();
    let m = problem.m();
    let mut worst: f64 = 0.0;
    for i in 0..m {
        let ax: f64 = (0..n).map(|j| a_dense[(i, j)] * x[j]).sum();
        worst = worst.max((ax - problem.b[i]).abs());
    }
    for j in 0..n {
        let aty: f64 = (0..m).map(|i| a_dense[(i, j)] * y[i]).sum();
        worst = worst.max((problem.q_diag[j] * x[j] + problem.c[j] - aty - z[j] + s[j]).abs());
    }
    for &j in problem.idx_nonneg.iter().chain(&problem.idx_box) {
        worst = worst.max((x[j] * z[j]).abs());
        worst = worst.max((-x[j]).max(0.0));
        worst = worst.max((-z[j]).max(0.0));
    }
    for &j in &problem.idx_box {
        worst = worst.max((x[j] + w[j] - problem.u[j]).abs());
        worst = worst.max((w[j] * s[j]).abs());
        worst = worst.max((-w[j]).max(0.0));
        worst = worst.max((-s[j]).max(0.0));
    }
    worst
}

/// Spectral condition number of a symmetric positive definite operator,
/// optionally under a preconditioner: densifies the operator (and the
/// preconditioner's inverse action), forms the symmetric similarity
/// `Pinv^(1/2) * N * Pinv^(1/2)`, and returns max/min eigenvalue.
///
/// Capped at 400 rows. Indefiniteness (of either matrix) is an error.
pub fn condition_number(
    op: &dyn LinearOperator,
    precond: Option<&dyn Preconditioner>,
) -> Result<f64, Error> {
    let m = op.rows();
    assert_eq!(m, op.cols(), "condition number needs a square operator");
    assert!(m <= 400, "dense condition number capped at 400 rows, got {m}");
    let mut n_dense = densify(op);
    n_dense = symmetrize(n_dense);

    let target = match precond {
        None => n_dense,
        Some(p) => {
            let mut basis = vec![0.0; m];
            let mut col = vec![0.0; m];
            let mut pinv = DMatrix::zeros(m, m);
            for j in 0..m {
                basis[j] = 1.0;
                p.apply_inverse_into(&basis, &mut col);
                basis[j] = 0.0;
                for i in 0..m {
                    pinv[(i, j)] = col[i];
                }
            }
            let pinv = symmetrize(pinv);
            let eig = pinv.symmetric_eigen();
            let min_eig = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
            if min_eig <= 0.0 {
                return Err(Error::NumericalFailure(format!(
                    "preconditioner inverse is not positive definite \
                     (min eigenvalue {min_eig:e})"
                )));
            }
            let mut sqrt_vals = eig.eigenvalues.clone();
            sqrt_vals.apply(|v| *v = v.sqrt());
            let half =
                &eig.eigenvectors * DMatrix::from_diagonal(&sqrt_vals) * eig.eigenvectors.transpose();
            symmetrize(&half * n_dense * &half)
        }
    };
    let eigenvalues = target.symmetric_eigen().eigenvalues;
    let min = eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = eigenvalues.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if min <= 0.0 {
        return Err(Error::NumericalFailure(format!(
            "operator is not positive definite (min eigenvalue {min:e})"
        )));
    }
    Ok(max / min)
}

fn symmetrize(a: DMatrix<f64>) -> DMatrix<f64> {
    (a.transpose() + &a) * 0.5
}

/// Euclidean norms of the five block-row residuals of one Newton solve,
/// evaluated against the full system (no elimination):
///
/// ```text
/// (1)  (Q + rho I) dx - A' dy - dz + ds = -r_d
/// (2)  A dx + delta dy                  =  r_p
/// (3)  dx_J + dw_J                      =  r_u_J
/// (4)  Z dx + X dz   (on nonneg+box)    =  r_xz
/// (5)  S dw + W ds   (on box)           =  r_ws
/// ```
///
/// Block 2 carries exactly the inner CG residual; the others should sit at
/// roundoff.
#[derive(Clone, Copy, Debug)]
pub struct NewtonBlockResiduals {
    pub stationarity: f64,
    pub primal: f64,
    pub box_link: f64,
    pub comp_xz: f64,
    pub comp_ws: f64,
    /// Norm of the full stacked right-hand side, for relative tolerances.
    pub rhs_norm: f64,
}

impl NewtonBlockResiduals {
    /// Largest residual among the blocks solved exactly (1, 3, 4, 5).
    pub fn max_exact_block(&self) -> f64 {
        self.stationarity.max(self.box_link).max(self.comp_xz).max(self.comp_ws)
    }
}

/// Substitutes a computed direction back into the five-block Newton system
/// linearized at `state` with regularization `(rho, delta)`.
pub fn newton_block_residuals(
    problem: &QpProblem,
    state: &IterateState,
    rho: f64,
    delta: f64,
    rhs: &NewtonRhs,
    dir: &Direction,
) -> NewtonBlockResiduals {
    let n = problem.n();
    let m = problem.m();
    assert_eq!(dir.dx.len(), n);
    assert_eq!(dir.dy.len(), m);

    let aty = problem.a.apply_adjoint(&dir.dy);
    let mut stationarity = 0.0;
    for j in 0..n {
        let r = (problem.q_diag[j] + rho) * dir.dx[j] - aty[j] - dir.dz[j] + dir.ds[j]
            + rhs.r_d[j];
        stationarity += r * r;
    }

    let ax = problem.a.apply(&dir.dx);
    let mut primal = 0.0;
    for i in 0..m {
        let r = ax[i] + delta * dir.dy[i] - rhs.r_p[i];
        primal += r * r;
    }

    let mut box_link = 0.0;
    let mut comp_ws = 0.0;
    for &j in &problem.idx_box {
        let r3 = dir.dx[j] + dir.dw[j] - rhs.r_u[j];
        box_link += r3 * r3;
        let r5 = state.s[j] * dir.dw[j] + state.w[j] * dir.ds[j] - rhs.r_ws[j];
        comp_ws += r5 * r5;
    }
    let mut comp_xz = 0.0;
    for &j in problem.idx_nonneg.iter().chain(&problem.idx_box) {
        let r4 = state.z[j] * dir.dx[j] + state.x[j] * dir.dz[j] - rhs.r_xz[j];
        comp_xz += r4 * r4;
    }

    let sq = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>();
    let rhs_norm =
        (sq(&rhs.r_d) + sq(&rhs.r_p) + sq(&rhs.r_u) + sq(&rhs.r_xz) + sq(&rhs.r_ws)).sqrt();

    NewtonBlockResiduals {
        stationarity: stationarity.sqrt(),
        primal: primal.sqrt(),
        box_link: box_link.sqrt(),
        comp_xz: comp_xz.sqrt(),
        comp_ws: comp_ws.sqrt(),
        rhs_norm,
    }
}

/// Seeded small QP with all three variable kinds, strictly feasible by
/// construction (the right-hand side is generated from an interior point)
/// and strictly convex off the boxed set, so the minimizer is unique.
///
/// Sizes stay within n <= 17 variables, m <= 10 rows, and at most
/// 2^6 * 3^5 enumeration assignments.
pub fn random_separable_qp(seed: u64) -> QpProblem {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_free = rng.gen_range(1..=6usize);
    let n_nonneg = rng.gen_range(1..=6usize);
    let n_box = rng.gen_range(1..=5usize);
    let n = n_free + n_nonneg + n_box;
    let m = rng.gen_range(1..=(n - 1).min(10));

    let mut kinds: Vec<u8> = Vec::new();
    kinds.extend(std::iter::repeat(0u8).take(n_free));
    kinds.extend(std::iter::repeat(1u8).take(n_nonneg));
    kinds.extend(std::iter::repeat(2u8).take(n_box));
    kinds.shuffle(&mut rng);

    let gauss = |rng: &mut ChaCha8Rng| -> f64 {
        // Box-Muller on two open-interval uniforms.
        let u1: f64 = 1.0 - rng.gen::<f64>();
        let u2: f64 = rng.gen::<f64>();
        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    };

    let mut q_diag = vec![0.0; n];
    let mut c = vec![0.0; n];
    let mut u = vec![0.0; n];
    let mut x0 = vec![0.0; n];
    let mut idx_free = Vec::new();
    let mut idx_nonneg = Vec::new();
    let mut idx_box = Vec::new();
    for j in 0..n {
        c[j] = gauss(&mut rng);
        match kinds[j] {
            0 => {
                idx_free.push(j);
                q_diag[j] = 0.1 + gauss(&mut rng).abs();
                x0[j] = gauss(&mut rng);
            }
            1 => {
                idx_nonneg.push(j);
                q_diag[j] = 0.1 + gauss(&mut rng).abs();
                x0[j] = 0.2 + gauss(&mut rng).abs();
            }
            _ => {
                idx_box.push(j);
                // Half the boxed variables get zero curvature, exercising
                // the LP-like corner of the model.
                if rng.gen::<bool>() {
                    q_diag[j] = 0.1 + gauss(&mut rng).abs();
                }
                u[j] = 0.5 + gauss(&mut rng).abs();
                x0[j] = u[j] * rng.gen_range(0.25..0.75);
            }
        }
    }
    let a_data: Vec<f64> = (0..m * n).map(|_| gauss(&mut rng)).collect();
    let a = DenseOp::new(m, n, a_data);
    let b = a.apply(&x0);
    QpProblem::new(
        q_diag,
        Arc::new(a),
        b,
        c,
        idx_free,
        idx_nonneg,
        idx_box,
        u,
    )
    .expect("generated instance is structurally valid")
}

#[cfg(test)]
mod tests {
    use super::*;
    use nysqp::ippmm::{solve, SolverConfig};
    use nysqp::linops::DiagonalOperator;
    use nysqp::nystrom::{build_nystrom_preconditioner, nystrom_approximation};

    fn tiny_fixed_var_qp() -> QpProblem {
        // min 1/2 x^2  s.t.  x = 1,  x >= 0.
        QpProblem::new(
            vec![1.0],
            Arc::new(DenseOp::new(1, 1, vec![1.0])),
            vec![1.0],
            vec![0.0],
            vec![],
            vec![0],
            vec![],
            vec![0.0],
        )
        .unwrap()
    }

    #[test]
    fn pinned_variable_kkt_by_hand() {
        let sol = enumerate_active_sets(&tiny_fixed_var_qp()).unwrap();
        assert!((sol.x[0] - 1.0).abs() < 1e-12);
        assert!((sol.y[0] - 1.0).abs() < 1e-12);
        assert!(sol.z[0].abs() < 1e-12);
        assert!(sol.kkt_residual <= 1e-10);
        assert!((sol.objective - 0.5).abs() < 1e-12);
    }

    #[test]
    fn lp_corner_is_found() {
        // min -x0  s.t.  x0 + x1 = 1,  x >= 0  ->  x = (1, 0).
        let problem = QpProblem::new(
            vec![0.0, 0.0],
            Arc::new(DenseOp::new(1, 2, vec![1.0, 1.0])),
            vec![1.0],
            vec![-1.0, 0.0],
            vec![],
            vec![0, 1],
            vec![],
            vec![0.0, 0.0],
        )
        .unwrap();
        let sol = enumerate_active_sets(&problem).unwrap();
        assert!((sol.x[0] - 1.0).abs() < 1e-12);
        assert!(sol.x[1].abs() < 1e-12);
        assert!((sol.objective + 1.0).abs() < 1e-12);
        assert!(sol.kkt_residual <= 1e-10);
    }

    #[test]
    fn infeasible_instance_is_reported() {
        // x0 + x1 = -1 with x >= 0 has no feasible point.
        let problem = QpProblem::new(
            vec![1.0, 1.0],
            Arc::new(DenseOp::new(1, 2, vec![1.0, 1.0])),
            vec![-1.0],
            vec![0.0, 0.0],
            vec![],
            vec![0, 1],
            vec![],
            vec![0.0, 0.0],
        )
        .unwrap();
        let err = enumerate_active_sets(&problem).unwrap_err();
        assert!(err.to_string().contains("no feasible"), "{err}");
    }

    #[test]
    fn oracle_never_beats_feasible_solver_and_vice_versa() {
        for seed in [2u64, 5, 9] {
            let problem = random_separable_qp(seed);
            let oracle = enumerate_active_sets(&problem).unwrap();
            assert!(oracle.kkt_residual <= 1e-10, "seed {seed}: {:e}", oracle.kkt_residual);
            let report = solve(&problem, &SolverConfig::default()).unwrap();
            assert!(
                oracle.objective <= report.objective + 1e-6,
                "seed {seed}: oracle {} vs solver {}",
                oracle.objective,
                report.objective
            );
            assert!(
                report.objective <= oracle.objective + 1e-6,
                "seed {seed}: solver {} vs oracle {}",
                report.objective,
                oracle.objective
            );
        }
    }

    #[test]
    fn deterministic_tie_break_prefers_small_assignment() {
        // Pure LP with c = 0: every feasible point of x0 + x1 = 1, x in
        // [0,1]^2 is optimal. The all-interior assignment is lexicographically
        // smallest but its KKT matrix is singular (Q = 0), so the oracle must
        // still pick a deterministic corner.
        let problem = QpProblem::new(
            vec![0.0, 0.0],
            Arc::new(DenseOp::new(1, 2, vec![1.0, 1.0])),
            vec![1.0],
            vec![0.0, 0.0],
            vec![],
            vec![],
            vec![0, 1],
            vec![1.0, 1.0],
        )
        .unwrap();
        let a = enumerate_active_sets(&problem).unwrap();
        let b = enumerate_active_sets(&problem).unwrap();
        assert_eq!(a.x, b.x);
        assert!(a.kkt_residual <= 1e-10);
    }

    #[test]
    fn condition_number_of_identity_and_diagonal() {
        let eye = DiagonalOperator::new(vec![1.0; 7]);
        assert!((condition_number(&eye, None).unwrap() - 1.0).abs() < 1e-12);
        let diag = DiagonalOperator::new(vec![1.0, 1e4]);
        let kappa = condition_number(&diag, None).unwrap();
        assert!((kappa - 1e4).abs() / 1e4 < 1e-8, "kappa = {kappa}");
    }

    #[test]
    fn condition_number_rejects_indefinite() {
        let diag = DiagonalOperator::new(vec![1.0, -1.0]);
        assert!(condition_number(&diag, None).is_err());
    }

    #[test]
    fn full_sketch_preconditioner_flattens_spectrum() {
        let m = 12;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let g = DMatrix::from_fn(m, m, |_, _| rng.gen::<f64>() - 0.5);
        let spd = symmetrize(&g * g.transpose()) + DMatrix::identity(m, m) * 0.1;
        let op = DenseOp::from_fn(m, m, |i, j| spd[(i, j)]);
        let delta = 1e-3;
        let factors = nystrom_approximation(&op, m, 99).unwrap();
        let precond = build_nystrom_preconditioner(factors, delta).unwrap();
        let shifted = DenseOp::from_fn(m, m, |i, j| spd[(i, j)] + if i == j { delta } else { 0.0 });
        let kappa = condition_number(&shifted, Some(&precond)).unwrap();
        assert!((kappa - 1.0).abs() < 1e-6, "kappa = {kappa}");
    }

    #[test]
    fn generated_instances_validate() {
        for seed in 0..10u64 {
            let problem = random_separable_qp(seed);
            assert!(problem.validate().is_ok(), "seed {seed}");
            assert!(!problem.idx_free.is_empty());
            assert!(!problem.idx_nonneg.is_empty());
            assert!(!problem.idx_box.is_empty());
            assert!(problem.n() <= 17);
            assert!(problem.m() <= 10);
        }
    }
}
