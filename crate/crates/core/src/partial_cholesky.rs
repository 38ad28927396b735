//! Partial pivoted Cholesky preconditioner for the regularized normal
//! equations `N_delta = A diag(d_reg)^-1 A' + delta I`.
//!
//! With `E` the permutation moving the `l` largest diagonal entries of
//! `N_delta` to the front (pivots chosen once from the initial diagonal,
//! never re-examined), the first `l` Cholesky columns of `E N_delta E'`
//! define
//!
//! ```text
//!          [ L11   0 ] [ I      0    ] [ L11'  L21' ]
//! P  = E'  [ L21   I ] [ 0  diag(S)  ] [  0     I   ]  E
//! ```
//!
//! where `diag(S)` is the diagonal of the exact Schur complement
//! `N_delta,22 - L21 L21'`, clamped below at machine epsilon times the
//! largest diagonal entry.  `P^-1 v` costs two triangular solves, two
//! products with `L21`, and a diagonal scaling: `2 l m + 2 m + 2 l^2` flops.
//! A full factorization (`l = m`) reproduces `N_delta` exactly.
//!
//! Everything is built matrix-free: the diagonal takes one adjoint product
//! per row (or a row sweep when the operator exposes rows), and each pivot
//! column takes one adjoint plus one forward product.

use nalgebra::DMatrix;

use crate::error::Error;
use crate::linops::{LinearOperator, NormalEqOp};
use crate::pcg::Preconditioner;


#[derive(Debug, Clone)]
pub struct PartialCholeskyFactors {
    /// `perm[i]` = original row index stored at permuted position `i`;
    /// the first `rank` entries are the pivots in greedy order.
    pub perm: Vec<usize>,
    /// `rank x rank` lower triangular.
    pub l11: DMatrix<f64>,
    /// `(m - rank) x rank`.
    pub l21: DMatrix<f64>,
    /// Diagonal Schur-complement approximation, strictly positive.
    pub schur_diag: Vec<f64>,
    pub delta: f64,
}

impl PartialCholeskyFactors {
    pub fn dim(&self) -> usize {
        self.perm.len()
    }

    pub fn rank(&self) -> usize {
        self.l11.nrows()
    }

    /// `P v`; diagnostics and tests only.
    pub fn apply_forward(&self, v: &[f64]) -> Vec<f64> {
        let m = self.dim();
        let l = self.rank();
        assert_eq!(v.len(), m, "apply_forward: got {}, expected {}", v.len(), m);
        // w = [L11' L21'; 0 I] E v
        let vp: Vec<f64> = self.perm.iter().map(|&j| v[j]).collect();
        let mut w = vec![0.0; m];
        for i in 0..l {
            let mut acc = 0.0;
            for r in i..l {
                acc += self.l11[(r, i)] * vp[r];
            }
            for r in 0..(m - l) {
                acc += self.l21[(r, i)] * vp[l + r];
            }
            w[i] = acc;
        }
        for r in 0..(m - l) {
            w[l + r] = vp[l + r];
        }
        // w2 = [I 0; 0 diag(S)] w
        for r in 0..(m - l) {
            w[l + r] *= self.schur_diag[r];
        }
        // out = E' [L11 0; L21 I] w2
        let mut outp = vec![0.0; m];
        for i in 0..l {
            let mut acc = 0.0;
            for s in 0..=i {
                acc += self.l11[(i, s)] * w[s];
            }
            outp[i] = acc;
        }
        for r in 0..(m - l) {
            let mut acc = w[l + r];
            for s in 0..l {
                acc += self.l21[(r, s)] * w[s];
            }
            outp[l + r] = acc;
        }
        let mut out = vec![0.0; m];
        for (i, &j) in self.perm.iter().enumerate() {
            out[j] = outp[i];
        }
        out
    }
}

/// Diagonal of `N_delta = A diag(d_reg)^-1 A' + delta I`.
///
/// Costs one adjoint product per row, or a single row sweep with no
/// operator products when `A` exposes rows.
pub fn compute_diag_matrix_free(
    a: &dyn LinearOperator,
    d_reg: &[f64],
    delta: f64,
) -> Result<Vec<f64>, Error> {
    let m = a.rows();
    let n = a.cols();
    assert_eq!(d_reg.len(), n, "compute_diag: d_reg length {} does not match columns {}", d_reg.len(), n);
    let mut d_reg_inv = Vec::with_capacity(n);
    for (j, &d) in d_reg.iter().enumerate() {
        if !(d > 0.0) || !d.is_finite() {
            return Err(Error::NonpositiveScaling { index: j, value: d });
        }
        d_reg_inv.push(1.0 / d);
    }

    let mut diag = vec![0.0; m];
    let mut row = vec![0.0; n];
    let mut basis = vec![0.0; m];
    for i in 0..m {
        let have_row = a.try_row(i, &mut row);
        if !have_row {
            basis.fill(0.0);
            basis[i] = 1.0;
            a.apply_adjoint_into(&basis, &mut row);
        }
        diag[i] = row.iter().zip(&d_reg_inv).map(|(r, w)| r * r * w).sum::<f64>() + delta;
    }
    Ok(diag)
}

/// Builds the rank-`rank` partial Cholesky preconditioner of `N_delta`.
pub fn build_partial_cholesky(
    a: std::sync::Arc<dyn LinearOperator>,
    d_reg: &[f64],
    delta: f64,
    rank: usize,
) -> Result<PartialCholeskyFactors, Error> {
    let m = a.rows();
    if rank == 0 || rank > m {
        return Err(Error::InvalidParameter(format!("rank {rank} must satisfy 1 <= l <= m = {m}")));
    }
    if !(delta > 0.0) || !delta.is_finite() {
        return Err(Error::InvalidParameter(format!("delta = {delta:e} must be finite and > 0")));
    }
    let diag = compute_diag_matrix_free(a.as_ref(), d_reg, delta)?;
    let max_diag = diag.iter().fold(0.0_f64, |acc, &d| acc.max(d));
    let floor = f64::EPSILON * max_diag;

    // Static greedy pivots: positions sorted by the initial diagonal,
    // largest first, index order breaking ties.
    let mut perm: Vec<usize> = (0..m).collect();
    perm.sort_by(|&i, &j| diag[j].partial_cmp(&diag[i]).unwrap().then(i.cmp(&j)));
    let l = rank;

    let n_op = NormalEqOp::from_d_reg(a, d_reg, delta)?;

    // Left-looking factorization of the first l permuted columns.
    let mut low = DMatrix::<f64>::zeros(m, l);
    let mut basis = vec![0.0; m];
    let mut col = vec![0.0; m];
    for t in 0..l {
        basis.fill(0.0);
        basis[perm[t]] = 1.0;
        n_op.apply_into(&basis, &mut col);
        // v = (E N E')[t.., t] minus updates from earlier columns.
        for i in t..m {
            let mut v = col[perm[i]];
            for s in 0..t {
                v -= low[(i, s)] * low[(t, s)];
            }
            low[(i, t)] = v;
        }
        let mut pivot = low[(t, t)];
        if pivot <= 0.0 {
            log::warn!("partial Cholesky pivot {t} is {pivot:e}; clamping to {floor:e}");
            pivot = floor;
        }
        let root = pivot.sqrt();
        low[(t, t)] = root;
        for i in (t + 1)..m {
            low[(i, t)] /= root;
        }
    }

    let mut schur_diag = Vec::with_capacity(m - l);
    for i in l..m {
        let mut s = diag[perm[i]];
        for t in 0..l {
            s -= low[(i, t)] * low[(i, t)];
        }
        schur_diag.push(s.max(floor));
    }

    let l11 = low.view((0, 0), (l, l)).into_owned();
    let l21 = low.view((l, 0), (m - l, l)).into_owned();
    Ok(PartialCholeskyFactors { perm, l11, l21, schur_diag, delta })
}

/// `P^-1 v` through the closed form: permute, forward solve, diagonal
/// Schur scaling, transposed back solve, unpermute.
pub fn apply_partial_cholesky_inverse(factors: &PartialCholeskyFactors, v: &[f64]) -> Vec<f64> {
    let m = factors.dim();
    let l = factors.rank();
    assert_eq!(v.len(), m, "apply_inverse: got {}, expected {}", v.len(), m);

    let vp: Vec<f64> = factors.perm.iter().map(|&j| v[j]).collect();

    // a = L11^-1 t1 (forward substitution)
    let mut a = vec![0.0; l];
    for i in 0..l {
        let mut acc = vp[i];
        for s in 0..i {
            acc -= factors.l11[(i, s)] * a[s];
        }
        a[i] = acc / factors.l11[(i, i)];
    }

    // b = diag(S)^-1 (t2 - L21 a)
    let mut b = vec![0.0; m - l];
    for r in 0..(m - l) {
        let mut acc = vp[l + r];
        for s in 0..l {
            acc -= factors.l21[(r, s)] * a[s];
        }
        b[r] = acc / factors.schur_diag[r];
    }

    // c = L11^-T (a - L21' b) (back substitution)
    let mut c = vec![0.0; l];
    for i in (0..l).rev() {
        let mut acc = a[i];
        for r in 0..(m - l) {
            acc -= factors.l21[(r, i)] * b[r];
        }
        for s in (i + 1)..l {
            acc -= factors.l11[(s, i)] * c[s];
        }
        c[i] = acc / factors.l11[(i, i)];
    }

    let mut out = vec![0.0; m];
    for (i, &j) in factors.perm.iter().enumerate() {
        out[j] = if i < l { c[i] } else { b[i - l] };
    }
    out
}

impl Preconditioner for PartialCholeskyFactors {
    fn apply_inverse_into(&self, v: &[f64], out: &mut [f64]) {
        out.copy_from_slice(&apply_partial_cholesky_inverse(self, v));
    }
}
