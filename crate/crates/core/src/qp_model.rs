//! Problem and iterate containers for separable convex QPs
//!
//! ```text
//!     minimize    1/2 x' Q x + c' x            Q = diag(q_diag) >= 0
//!     subject to  A x = b
//!                 x_j free        j in F
//!                 x_j >= 0        j in I
//!                 0 <= x_j <= u_j j in J
//! ```
//!
//! Box constraints are handled with slacks `w_J = u_J - x_J >= 0`.  An
//! iterate carries five vectors `(x, y, z, w, s)`: `y` multipliers for
//! `Ax = b`, `z` for the lower bounds, `s` for the box upper bounds.  All
//! five are stored at full length `n` with a fixed padding convention:
//! `z_F = 0`, `w_j = s_j = 0` for `j` outside `J`, and `u_j = 0` outside
//! `J`.  The duality measure is
//!
//! ```text
//!     mu = (x_IJ' z_IJ + w_J' s_J) / (|I u J| + |J|)
//! ```
//!
//! and is defined as 0 when no variable is bounded.

use std::sync::Arc;

use crate::error::Error;
use crate::linops::{adjoint_consistency_defect, LinearOperator};
use crate::vecops::norm2;

/// Regularization parameters never shrink below this floor.
pub const PMM_REG_FLOOR: f64 = 5e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VarKind {
    Free,
    NonNeg,
    Box,
}

#[derive(Clone)]
pub struct QpProblem {
    /// Diagonal of `Q`, entrywise `>= 0`.
    pub q_diag: Vec<f64>,
    /// Constraint operator, `m x n`.
    pub a: Arc<dyn LinearOperator>,
    pub b: Vec<f64>,
    pub c: Vec<f64>,
    /// Disjoint index sets partitioning `0..n`, each sorted ascending.
    pub idx_free: Vec<usize>,
    pub idx_nonneg: Vec<usize>,
    pub idx_box: Vec<usize>,
    /// Upper bounds: `u_j > 0` on box indices, exactly `0` elsewhere.
    pub u: Vec<f64>,
}

impl std::fmt::Debug for QpProblem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("QpProblem")
            .field("n", &self.n())
            .field("m", &self.m())
            .field("free", &self.idx_free.len())
            .field("nonneg", &self.idx_nonneg.len())
            .field("box", &self.idx_box.len())
            .finish_non_exhaustive()
    }
}

impl QpProblem {
    /// Builds a problem and rejects structural defects immediately.
    /// Index lists are sorted on the way in.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        q_diag: Vec<f64>,
        a: Arc<dyn LinearOperator>,
        b: Vec<f64>,
        c: Vec<f64>,
        mut idx_free: Vec<usize>,
        mut idx_nonneg: Vec<usize>,
        mut idx_box: Vec<usize>,
        u: Vec<f64>,
    ) -> Result<Self, Error> {
        idx_free.sort_unstable();
        idx_nonneg.sort_unstable();
        idx_box.sort_unstable();
        let problem = QpProblem { q_diag, a, b, c, idx_free, idx_nonneg, idx_box, u };
        let issues = problem.structural_issues();
        if issues.is_empty() {
            Ok(problem)
        } else {
            Err(Error::InvalidProblem(issues))
        }
    }

    pub fn n(&self) -> usize {
        self.q_diag.len()
    }

    pub fn m(&self) -> usize {
        self.b.len()
    }

    /// Number of bounded variables plus box slacks, the denominator of the
    /// duality measure.
    pub fn complementarity_pairs(&self) -> usize {
        self.idx_nonneg.len() + 2 * self.idx_box.len()
    }

    /// Per-variable kind lookup table.
    pub fn var_kinds(&self) -> Vec<VarKind> {
        let mut kinds = vec![VarKind::Free; self.n()];
        for &j in &self.idx_nonneg {
            kinds[j] = VarKind::NonNeg;
        }
        for &j in &self.idx_box {
            kinds[j] = VarKind::Box;
        }
        kinds
    }

    fn structural_issues(&self) -> Vec<String> {
        let mut issues = Vec::new();
        let n = self.n();
        if self.a.cols() != n {
            issues.push(format!("operator has {} columns but q_diag has length {}", self.a.cols(), n));
        }
        if self.a.rows() != self.b.len() {
            issues.push(format!("operator has {} rows but b has length {}", self.a.rows(), self.b.len()));
        }
        if self.c.len() != n {
            issues.push(format!("c has length {} but n = {}", self.c.len(), n));
        }
        if self.u.len() != n {
            issues.push(format!("u has length {} but n = {}", self.u.len(), n));
        }
        for (name, idx) in
            [("free", &self.idx_free), ("nonneg", &self.idx_nonneg), ("box", &self.idx_box)]
        {
            for &j in idx.iter() {
                if j >= n {
                    issues.push(format!("{name} index {j} out of range (n = {n})"));
                }
            }
        }
        let mut seen = vec![0u8; n];
        for idx in [&self.idx_free, &self.idx_nonneg, &self.idx_box] {
            for &j in idx.iter().filter(|&&j| j < n) {
                seen[j] += 1;
            }
        }
        for (j, &count) in seen.iter().enumerate() {
            if count == 0 {
                issues.push(format!("index {j} belongs to no variable class"));
            } else if count > 1 {
                issues.push(format!("index {j} belongs to {count} variable classes"));
            }
        }
        for (j, &q) in self.q_diag.iter().enumerate() {
            if !(q >= 0.0) || !q.is_finite() {
                issues.push(format!("q_diag[{j}] = {q:e} must be finite and >= 0"));
            }
        }
        let kinds = if issues.is_empty() { self.var_kinds() } else { Vec::new() };
        if issues.is_empty() {
            for (j, &uj) in self.u.iter().enumerate() {
                match kinds[j] {
                    VarKind::Box => {
                        if !(uj > 0.0) || !uj.is_finite() {
                            issues.push(format!("u[{j}] = {uj:e} must be finite and > 0 on a box index"));
                        }
                    }
                    _ => {
                        if uj != 0.0 {
                            issues.push(format!("u[{j}] = {uj:e} must be 0 outside the box set"));
                        }
                    }
                }
            }
        }
        issues
    }

    /// Full validation: structural invariants plus adjoint consistency of
    /// the operator on 3 seeded random probe pairs.
    pub fn validate(&self) -> Result<(), Vec<String>> {
        let mut issues = self.structural_issues();
        if issues.is_empty() {
            let defect = adjoint_consistency_defect(self.a.as_ref(), 3, 0x5eed);
            if defect > 1e-10 {
                issues.push(format!(
                    "operator adjoint is inconsistent: relative defect {defect:e} on random probes"
                ));
            }
        }
        if issues.is_empty() {
            Ok(())
        } else {
            Err(issues)
        }
    }
}

/// Primal-dual iterate; see the module doc for the padding convention.
#[derive(Debug, Clone)]
pub struct IterateState {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub z: Vec<f64>,
    pub w: Vec<f64>,
    pub s: Vec<f64>,
    pub mu: f64,
}

impl IterateState {
    /// Violations of strict positivity and padding; empty when clean.
    pub fn invariant_violations(&self, problem: &QpProblem) -> Vec<String> {
        let mut v = Vec::new();
        for &j in problem.idx_nonneg.iter().chain(&problem.idx_box) {
            if !(self.x[j] > 0.0) {
                v.push(format!("x[{j}] = {:e} must be > 0", self.x[j]));
            }
            if !(self.z[j] > 0.0) {
                v.push(format!("z[{j}] = {:e} must be > 0", self.z[j]));
            }
        }
        for &j in &problem.idx_box {
            if !(self.w[j] > 0.0) {
                v.push(format!("w[{j}] = {:e} must be > 0", self.w[j]));
            }
            if !(self.s[j] > 0.0) {
                v.push(format!("s[{j}] = {:e} must be > 0", self.s[j]));
            }
        }
        for &j in &problem.idx_free {
            if self.z[j] != 0.0 {
                v.push(format!("z[{j}] = {:e} must be 0 on a free index", self.z[j]));
            }
        }
        for &j in problem.idx_free.iter().chain(&problem.idx_nonneg) {
            if self.w[j] != 0.0 {
                v.push(format!("w[{j}] = {:e} must be 0 outside the box set", self.w[j]));
            }
            if self.s[j] != 0.0 {
                v.push(format!("s[{j}] = {:e} must be 0 outside the box set", self.s[j]));
            }
        }
        let mu = duality_measure(self, problem);
        let scale = mu.abs().max(self.mu.abs()).max(1.0);
        if (self.mu - mu).abs() > 1e-14 * scale {
            v.push(format!("stored mu = {:e} disagrees with computed {mu:e}", self.mu));
        }
        v
    }
}

/// `1/2 x' Q x + c' x`
pub fn objective_value(problem: &QpProblem, x: &[f64]) -> f64 {
    assert_eq!(x.len(), problem.n(), "objective: x length {} vs n {}", x.len(), problem.n());
    x.iter()
        .zip(&problem.q_diag)
        .zip(&problem.c)
        .map(|((xi, qi), ci)| 0.5 * qi * xi * xi + ci * xi)
        .sum()
}

/// `mu = (x_IJ' z_IJ + w_J' s_J) / (|I u J| + |J|)`, or 0 with no bounds.
pub fn duality_measure(state: &IterateState, problem: &QpProblem) -> f64 {
    let pairs = problem.complementarity_pairs();
    if pairs == 0 {
        return 0.0;
    }
    let mut acc = 0.0;
    for &j in problem.idx_nonneg.iter().chain(&problem.idx_box) {
        acc += state.x[j] * state.z[j];
    }
    for &j in &problem.idx_box {
        acc += state.w[j] * state.s[j];
    }
    acc / pairs as f64
}

/// Proximal and dual-regularization state of the outer method.
#[derive(Debug, Clone)]
pub struct PmmParams {
    /// Dual regularization (primal proximal weight on `y`); `>= 5e-10`.
    pub delta: f64,
    /// Primal regularization; `>= 5e-10`.
    pub rho: f64,
    /// Multiplier estimate `lambda` for `Ax = b`, length `m`.
    pub lambda_est: Vec<f64>,
    /// Primal proximal center `zeta`, length `n`.
    pub zeta_est: Vec<f64>,
}

/// Plain KKT residuals (no proximal terms) and their relative norms.
#[derive(Debug, Clone)]
pub struct Residuals {
    /// `b - A x`
    pub r_p: Vec<f64>,
    /// `c + Q x - A' y - z + s`
    pub r_d: Vec<f64>,
    /// `(u - x - w)_J`, zero-padded off `J`
    pub r_u: Vec<f64>,
    /// `|Ax - b| / (1 + |b|)`
    pub rel_p: f64,
    /// `|c + Qx - A'y - z + s| / (1 + |c|)`
    pub rel_d: f64,
    /// `|(u - x - w)_J| / (1 + |u|)`
    pub rel_u: f64,
    /// Duality measure of the state.
    pub rel_gap: f64,
}

/// One forward and one adjoint product of `A`.
pub fn compute_residuals(problem: &QpProblem, state: &IterateState) -> Residuals {
    let ax = problem.a.apply(&state.x);
    let aty = problem.a.apply_adjoint(&state.y);
    let r_p: Vec<f64> = problem.b.iter().zip(&ax).map(|(bi, axi)| bi - axi).collect();
    let r_d: Vec<f64> = (0..problem.n())
        .map(|j| {
            problem.c[j] + problem.q_diag[j] * state.x[j] - aty[j] - state.z[j] + state.s[j]
        })
        .collect();
    let mut r_u = vec![0.0; problem.n()];
    for &j in &problem.idx_box {
        r_u[j] = problem.u[j] - state.x[j] - state.w[j];
    }
    Residuals {
        rel_p: norm2(&r_p) / (1.0 + norm2(&problem.b)),
        rel_d: norm2(&r_d) / (1.0 + norm2(&problem.c)),
        rel_u: norm2(&r_u) / (1.0 + norm2(&problem.u)),
        rel_gap: duality_measure(state, problem),
        r_p,
        r_d,
        r_u,
    }
}
