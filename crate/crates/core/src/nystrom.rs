//! Randomized Nystrom approximation of a symmetric PSD operator and the
//! induced preconditioner.
//!
//! Approximation (`l` = sketch size):
//!
//! ```text
//! Omega = seeded Gaussian m x l          (one column per sketch vector)
//! Y     = N Omega                        (l operator products)
//! nu    = eps(|Y|_F);  Y_nu = Y + nu Omega
//! C     = chol(Omega' Y_nu)              (nu grows 10x on failure, <= 3 retries)
//! B     = Y_nu C^-1
//! B     = U_hat Sigma V'                 (thin SVD)
//! Lambda_hat = max(0, Sigma^2 - nu I)
//! ```
//!
//! giving `N_hat = U_hat Lambda_hat U_hat'` with `0 <= N_hat <= N` up to
//! roundoff.  The preconditioner for `N + delta I` is
//!
//! ```text
//! P^-1 = (lambda_l + delta) U_hat (Lambda_hat + delta I)^-1 U_hat'
//!        + (I - U_hat U_hat')
//! ```
//!
//! whose application costs `2 l m + m + 5 l` flops.  A full sketch `l = m`
//! makes `P^-1 (N + delta I)` a multiple of the identity.
//!
//! The Gaussian sketch consumes the random stream column by column, two
//! uniform draws per entry, so sketches of sizes `l < l'` from one seed
//! share their first `l` columns.  The thin SVD goes through an
//! eigendecomposition of the small Gram matrix `B'B` for `l <= 64` and
//! one-sided Jacobi above that; both paths finish with a re-orthonormalizing
//! polish so `|U_hat'U_hat - I|_F` stays at roundoff even when the sketch
//! is numerically rank deficient.

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::Error;
use crate::linops::{standard_normal, LinearOperator};
use crate::pcg::Preconditioner;

/// Largest sketch size routed through the Gram-matrix SVD path.
const GRAM_PATH_MAX: usize = 64;

/// Rank-`l` eigen-factors `N_hat = U_hat diag(lambda_hat) U_hat'`.
#[derive(Debug, Clone, PartialEq)]
pub struct NystromFactors {
    /// `m x l`, orthonormal columns.
    pub u_hat: DMatrix<f64>,
    /// Approximate eigenvalues, descending, all `>= 0`.
    pub lambda_hat: Vec<f64>,
}

impl NystromFactors {
    pub fn dim(&self) -> usize {
        self.u_hat.nrows()
    }

    pub fn rank(&self) -> usize {
        self.lambda_hat.len()
    }

    /// `N_hat v`
    pub fn apply_approx(&self, v: &[f64]) -> Vec<f64> {
        let vd = DVector::from_column_slice(v);
        let mut t = self.u_hat.tr_mul(&vd);
        for (ti, l) in t.iter_mut().zip(&self.lambda_hat) {
            *ti *= l;
        }
        (&self.u_hat * t).data.into()
    }

    /// `|U_hat' U_hat - I|_F`
    pub fn orthonormality_defect(&self) -> f64 {
        let g = self.u_hat.tr_mul(&self.u_hat);
        (g - DMatrix::identity(self.rank(), self.rank())).norm()
    }
}

/// Distance from `x` to the next larger double (the `eps(x)` shift scale).
fn ulp(x: f64) -> f64 {
    let x = x.abs();
    if x == 0.0 || !x.is_finite() {
        return f64::MIN_POSITIVE;
    }
    let e = x.log2().floor() as i32 - 52;
    2f64.powi(e)
}

/// Randomized Nystrom approximation of the symmetric PSD operator `op`.
///
/// Spends exactly `sketch_size` operator products.  The sketch is fully
/// determined by `seed`: identical calls return bit-identical factors.
pub fn nystrom_approximation(
    op: &dyn LinearOperator,
    sketch_size: usize,
    seed: u64,
) -> Result<NystromFactors, Error> {
    let m = op.rows();
    assert_eq!(op.cols(), m, "nystrom_approximation: operator must be square, got {}x{}", m, op.cols());
    if sketch_size == 0 || sketch_size > m {
        return Err(Error::InvalidParameter(format!(
            "sketch size {sketch_size} must satisfy 1 <= l <= m = {m}"
        )));
    }
    let l = sketch_size;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut omega = DMatrix::<f64>::zeros(m, l);
    for j in 0..l {
        for i in 0..m {
            omega[(i, j)] = standard_normal(&mut rng);
        }
    }

    let mut y = DMatrix::<f64>::zeros(m, l);
    let mut col = vec![0.0; m];
    let mut out = vec![0.0; m];
    for j in 0..l {
        for i in 0..m {
            col[i] = omega[(i, j)];
        }
        op.apply_into(&col, &mut out);
        for i in 0..m {
            y[(i, j)] = out[i];
        }
    }

    let mut nu = ulp(y.norm());
    let mut b = None;
    let mut attempts = 0;
    for _ in 0..4 {
        attempts += 1;
        let y_nu = &y + nu * &omega;
        let mut gram = omega.tr_mul(&y_nu);
        let gt = gram.transpose();
        gram = (gram + gt) * 0.5;
        if let Some(chol) = Cholesky::new(gram) {
            if let Some(bt) = chol.l().solve_lower_triangular(&y_nu.transpose()) {
                b = Some(bt.transpose());
                break;
            }
        }
        nu *= 10.0;
    }
    let b = match b {
        Some(b) => b,
        None => return Err(Error::SketchFailure { attempts, last_shift: nu / 10.0 }),
    };

    let (u_hat, sigma) = if l <= GRAM_PATH_MAX { thin_svd_gram(&b) } else { thin_svd_jacobi(b) };
    let lambda_hat: Vec<f64> = sigma.iter().map(|s| (s * s - nu).max(0.0)).collect();
    Ok(NystromFactors { u_hat, lambda_hat })
}

/// Thin SVD via the `l x l` Gram matrix: eigenvectors of `B'B` map to right
/// singular vectors, `u_i = B v_i / |B v_i|`.
fn thin_svd_gram(b: &DMatrix<f64>) -> (DMatrix<f64>, Vec<f64>) {
    let l = b.ncols();
    let mut gram = b.tr_mul(b);
    let gt = gram.transpose();
    gram = (gram + gt) * 0.5;
    let eig = SymmetricEigen::new(gram);

    let mut order: Vec<usize> = (0..l).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].partial_cmp(&eig.eigenvalues[i]).unwrap());

    let sigma_max = eig.eigenvalues.iter().fold(0.0_f64, |a, &w| a.max(w)).max(0.0).sqrt();
    let collapse = sigma_max * f64::EPSILON * (b.nrows().max(l) as f64);

    let mut cols = Vec::with_capacity(l);
    for &k in &order {
        let v = eig.eigenvectors.column(k);
        let bv = b * v;
        let norm = bv.norm();
        if norm > collapse {
            cols.push((norm, Some(bv / norm)));
        } else {
            cols.push((eig.eigenvalues[k].max(0.0).sqrt(), None));
        }
    }
    finish_orthonormal(b.nrows(), cols)
}

/// Thin SVD by one-sided Jacobi: rotate column pairs of `B` until all are
/// mutually orthogonal, then read off norms as singular values.
fn thin_svd_jacobi(mut b: DMatrix<f64>) -> (DMatrix<f64>, Vec<f64>) {
    let m = b.nrows();
    let l = b.ncols();
    let tol = 1e-15;
    for _sweep in 0..40 {
        let mut rotated = false;
        for i in 0..l {
            for j in (i + 1)..l {
                let mut aii = 0.0;
                let mut ajj = 0.0;
                let mut aij = 0.0;
                for r in 0..m {
                    let bi = b[(r, i)];
                    let bj = b[(r, j)];
                    aii += bi * bi;
                    ajj += bj * bj;
                    aij += bi * bj;
                }
                if aij.abs() <= tol * (aii * ajj).sqrt() || aii == 0.0 || ajj == 0.0 {
                    continue;
                }
                rotated = true;
                let zeta = (ajj - aii) / (2.0 * aij);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let cs = 1.0 / (1.0 + t * t).sqrt();
                let sn = cs * t;
                for r in 0..m {
                    let bi = b[(r, i)];
                    let bj = b[(r, j)];
                    b[(r, i)] = cs * bi - sn * bj;
                    b[(r, j)] = sn * bi + cs * bj;
                }
            }
        }
        if !rotated {
            break;
        }
    }

    let norms: Vec<f64> = (0..l).map(|j| b.column(j).norm()).collect();
    let sigma_max = norms.iter().fold(0.0_f64, |a, &n| a.max(n));
    let collapse = sigma_max * f64::EPSILON * (m.max(l) as f64);
    let mut order: Vec<usize> = (0..l).collect();
    order.sort_by(|&i, &j| norms[j].partial_cmp(&norms[i]).unwrap());

    let mut cols = Vec::with_capacity(l);
    for &k in &order {
        if norms[k] > collapse {
            cols.push((norms[k], Some(b.column(k) / norms[k])));
        } else {
            cols.push((norms[k], None));
        }
    }
    finish_orthonormal(m, cols)
}

/// Re-orthonormalizes candidate left singular vectors (descending singular
/// value order) by modified Gram-Schmidt with one reorthogonalization pass.
/// Columns that collapsed numerically (`None`, or dependent on earlier
/// columns) are completed with canonical basis vectors; such columns always
/// carry singular values at the noise-shift scale, so the completed
/// directions never contribute to the approximation `N_hat`.
fn finish_orthonormal(m: usize, cols: Vec<(f64, Option<DVector<f64>>)>) -> (DMatrix<f64>, Vec<f64>) {
    let l = cols.len();
    let mut basis: Vec<DVector<f64>> = Vec::with_capacity(l);
    let mut sigma = Vec::with_capacity(l);

    let project_out = |basis: &[DVector<f64>], v: &mut DVector<f64>| {
        for _ in 0..2 {
            for q in basis {
                let c = q.dot(v);
                v.axpy(-c, q, 1.0);
            }
        }
    };

    for (s, col) in cols {
        sigma.push(s);
        if let Some(mut v) = col {
            project_out(&basis, &mut v);
            let n = v.norm();
            if n > 1e-8 {
                basis.push(v / n);
                continue;
            }
        }
        // Deterministic completion: first canonical vector with a healthy
        // component outside the current span.
        let mut completed = false;
        for k in 0..m {
            let mut e = DVector::zeros(m);
            e[k] = 1.0;
            project_out(&basis, &mut e);
            let n = e.norm();
            if n > 0.5 {
                basis.push(e / n);
                completed = true;
                break;
            }
        }
        assert!(completed, "orthonormal completion failed: l <= m guarantees a candidate");
    }

    let mut u = DMatrix::zeros(m, l);
    for (j, q) in basis.iter().enumerate() {
        u.set_column(j, q);
    }
    (u, sigma)
}

/// Nystrom preconditioner for `N + delta I`.
pub struct NystromPreconditioner {
    pub factors: NystromFactors,
    pub delta: f64,
    /// `(lambda_l + delta) / (lambda_i + delta) - 1`, the correction applied
    /// inside the sketched subspace by `P^-1`.
    inv_shift: Vec<f64>,
    /// `(lambda_i + delta) / (lambda_l + delta) - 1`, ditto for `P`.
    fwd_shift: Vec<f64>,
}

/// Builds the preconditioner; `delta` must be finite and strictly positive.
///
/// Eigenvalues of `P^-1` lie in
/// `[(lambda_l + delta) / (lambda_1 + delta), 1]`.
pub fn build_nystrom_preconditioner(
    factors: NystromFactors,
    delta: f64,
) -> Result<NystromPreconditioner, Error> {
    if !(delta > 0.0) || !delta.is_finite() {
        return Err(Error::InvalidParameter(format!("delta = {delta:e} must be finite and > 0")));
    }
    if factors.rank() == 0 {
        return Err(Error::InvalidParameter("Nystrom factors have rank 0".into()));
    }
    let lambda_last = *factors.lambda_hat.last().expect("rank >= 1");
    let inv_shift: Vec<f64> =
        factors.lambda_hat.iter().map(|l| (lambda_last + delta) / (l + delta) - 1.0).collect();
    let fwd_shift: Vec<f64> =
        factors.lambda_hat.iter().map(|l| (l + delta) / (lambda_last + delta) - 1.0).collect();
    Ok(NystromPreconditioner { factors, delta, inv_shift, fwd_shift })
}

impl NystromPreconditioner {
    fn apply_shifted(&self, v: &[f64], shift: &[f64], out: &mut [f64]) {
        let u = &self.factors.u_hat;
        assert_eq!(v.len(), u.nrows(), "preconditioner: got {}, expected {}", v.len(), u.nrows());
        let vd = DVector::from_column_slice(v);
        let mut t = u.tr_mul(&vd);
        for (ti, s) in t.iter_mut().zip(shift) {
            *ti *= s;
        }
        let w = u * t;
        for ((o, x), wi) in out.iter_mut().zip(v).zip(w.iter()) {
            *o = x + wi;
        }
    }

    /// Forward action `P v`; only needed by diagnostics and tests.
    pub fn apply_forward(&self, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; v.len()];
        self.apply_shifted(v, &self.fwd_shift, &mut out);
        out
    }
}

impl Preconditioner for NystromPreconditioner {
    fn apply_inverse_into(&self, v: &[f64], out: &mut [f64]) {
        self.apply_shifted(v, &self.inv_shift, out);
    }
}

/// Effective dimension `sum_i lambda_i / (lambda_i + delta)` of a PSD
/// spectrum at regularization level `delta > 0`.
pub fn effective_dimension(eigenvalues: &[f64], delta: f64) -> f64 {
    assert!(delta > 0.0, "effective_dimension: delta = {delta:e} must be > 0");
    eigenvalues
        .iter()
        .map(|&l| {
            debug_assert!(l >= 0.0, "effective_dimension: negative eigenvalue {l:e}");
            l / (l + delta)
        })
        .sum()
}
