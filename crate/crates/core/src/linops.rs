//! Linear operators accessed only through matrix-vector products.
//!
//! Everything the solver multiplies by is a [`LinearOperator`]: an immutable
//! object exposing `apply` (`v -> A v`) and `apply_adjoint` (`v -> A' v`).
//! Operators compose lazily; in particular [`NormalEqOp`] evaluates
//!
//! ```text
//!     N_delta v = A (Q + Theta^-1 + rho I)^-1 (A' v) + delta v
//! ```
//!
//! with exactly one forward and one adjoint product of `A` per application
//! and never materializes the matrix.  [`CountedOp`] wraps any operator with
//! an atomic matvec counter so callers can audit per-phase product counts.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Error;

/// Matrix-free linear map between fixed-dimension real vector spaces.
///
/// Implementations must be deterministic and immutable after construction:
/// two applications to the same vector return identical results.
pub trait LinearOperator: Send + Sync {
    fn rows(&self) -> usize;
    fn cols(&self) -> usize;

    /// `out = A v`; `v.len() == cols()`, `out.len() == rows()`.
    fn apply_into(&self, v: &[f64], out: &mut [f64]);

    /// `out = A' v`; `v.len() == rows()`, `out.len() == cols()`.
    fn apply_adjoint_into(&self, v: &[f64], out: &mut [f64]);

    /// Writes row `i` of the matrix (`A' e_i`) into `out` and returns true
    /// when rows are cheaply accessible without a full adjoint product.
    /// The default claims no row access.
    fn try_row(&self, _i: usize, _out: &mut [f64]) -> bool {
        false
    }

    fn apply(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(
            v.len(),
            self.cols(),
            "apply: vector length {} does not match operator columns {}",
            v.len(),
            self.cols()
        );
        let mut out = vec![0.0; self.rows()];
        self.apply_into(v, &mut out);
        out
    }

    fn apply_adjoint(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(
            v.len(),
            self.rows(),
            "apply_adjoint: vector length {} does not match operator rows {}",
            v.len(),
            self.rows()
        );
        let mut out = vec![0.0; self.cols()];
        self.apply_adjoint_into(v, &mut out);
        out
    }
}

impl LinearOperator for Arc<dyn LinearOperator> {
    fn rows(&self) -> usize {
        (**self).rows()
    }
    fn cols(&self) -> usize {
        (**self).cols()
    }
    fn apply_into(&self, v: &[f64], out: &mut [f64]) {
        (**self).apply_into(v, out)
    }
    fn apply_adjoint_into(&self, v: &[f64], out: &mut [f64]) {
        (**self).apply_adjoint_into(v, out)
    }
    fn try_row(&self, i: usize, out: &mut [f64]) -> bool {
        (**self).try_row(i, out)
    }
}

/// Dense row-major matrix operator.
#[derive(Debug, Clone)]
pub struct DenseOp {
    rows: usize,
    cols: usize,
    /// Row-major entries, `data[i * cols + j] = A_ij`.
    data: Vec<f64>,
}

impl DenseOp {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(
            data.len(),
            rows * cols,
            "DenseOp: {} entries for a {}x{} matrix",
            data.len(),
            rows,
            cols
        );
        DenseOp { rows, cols, data }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        DenseOp { rows, cols, data }
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }
}

impl LinearOperator for DenseOp {
    fn rows(&self) -> usize {
        self.rows
    }
    fn cols(&self) -> usize {
        self.cols
    }

    fn apply_into(&self, v: &[f64], out: &mut [f64]) {
        assert_eq!(v.len(), self.cols, "apply: got {}, expected {}", v.len(), self.cols);
        assert_eq!(out.len(), self.rows, "apply: out {}, expected {}", out.len(), self.rows);
        for (i, oi) in out.iter_mut().enumerate() {
            *oi = crate::vecops::dot(self.row(i), v);
        }
    }

    fn apply_adjoint_into(&self, v: &[f64], out: &mut [f64]) {
        assert_eq!(v.len(), self.rows, "apply_adjoint: got {}, expected {}", v.len(), self.rows);
        assert_eq!(out.len(), self.cols, "apply_adjoint: out {}, expected {}", out.len(), self.cols);
        out.fill(0.0);
        for (i, vi) in v.iter().enumerate() {
            if *vi != 0.0 {
                crate::vecops::axpy(*vi, self.row(i), out);
            }
        }
    }

    fn try_row(&self, i: usize, out: &mut [f64]) -> bool {
        out.copy_from_slice(self.row(i));
        true
    }
}

/// Sparse matrix in compressed sparse column form (one column per sample in
/// the data-file readers).
#[derive(Debug, Clone)]
pub struct CscMatrix {
    rows: usize,
    cols: usize,
    col_ptr: Vec<usize>,
    row_idx: Vec<usize>,
    values: Vec<f64>,
}

impl CscMatrix {
    /// Builds from per-column `(row, value)` lists; rows within a column
    /// must be strictly increasing.
    pub fn from_columns(rows: usize, columns: &[Vec<(usize, f64)>]) -> Self {
        let cols = columns.len();
        let mut col_ptr = Vec::with_capacity(cols + 1);
        let mut row_idx = Vec::new();
        let mut values = Vec::new();
        col_ptr.push(0);
        for col in columns {
            let mut last = None;
            for &(r, v) in col {
                assert!(r < rows, "CscMatrix: row {} out of bounds {}", r, rows);
                assert!(last.map_or(true, |p| r > p), "CscMatrix: unsorted rows in column");
                last = Some(r);
                row_idx.push(r);
                values.push(v);
            }
            col_ptr.push(row_idx.len());
        }
        CscMatrix { rows, cols, col_ptr, row_idx, values }
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn column(&self, j: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let lo = self.col_ptr[j];
        let hi = self.col_ptr[j + 1];
        self.row_idx[lo..hi].iter().copied().zip(self.values[lo..hi].iter().copied())
    }
}

impl LinearOperator for CscMatrix {
    fn rows(&self) -> usize {
        self.rows
    }
    fn cols(&self) -> usize {
        self.cols
    }

    fn apply_into(&self, v: &[f64], out: &mut [f64]) {
        assert_eq!(v.len(), self.cols, "apply: got {}, expected {}", v.len(), self.cols);
        out.fill(0.0);
        for (j, vj) in v.iter().enumerate() {
            if *vj != 0.0 {
                for (r, x) in self.column(j) {
                    out[r] += x * vj;
                }
            }
        }
    }

    fn apply_adjoint_into(&self, v: &[f64], out: &mut [f64]) {
        assert_eq!(v.len(), self.rows, "apply_adjoint: got {}, expected {}", v.len(), self.rows);
        for (j, oj) in out.iter_mut().enumerate() {
            *oj = self.column(j).map(|(r, x)| x * v[r]).sum();
        }
    }
}

/// Square diagonal operator.
#[derive(Debug, Clone)]
pub struct DiagonalOperator {
    d: Vec<f64>,
}

impl DiagonalOperator {
    pub fn new(d: Vec<f64>) -> Self {
        DiagonalOperator { d }
    }

    pub fn diag(&self) -> &[f64] {
        &self.d
    }
}

impl LinearOperator for DiagonalOperator {
    fn rows(&self) -> usize {
        self.d.len()
    }
    fn cols(&self) -> usize {
        self.d.len()
    }

    fn apply_into(&self, v: &[f64], out: &mut [f64]) {
        assert_eq!(v.len(), self.d.len(), "apply: got {}, expected {}", v.len(), self.d.len());
        for ((o, x), d) in out.iter_mut().zip(v).zip(&self.d) {
            *o = d * x;
        }
    }

    fn apply_adjoint_into(&self, v: &[f64], out: &mut [f64]) {
        self.apply_into(v, out);
    }

    fn try_row(&self, i: usize, out: &mut [f64]) -> bool {
        out.fill(0.0);
        out[i] = self.d[i];
        true
    }
}

/// Operator defined by closures; used to build ad-hoc or deliberately opaque
/// operators in tests.
pub struct FnOp {
    rows: usize,
    cols: usize,
    forward: Box<dyn Fn(&[f64], &mut [f64]) + Send + Sync>,
    adjoint: Box<dyn Fn(&[f64], &mut [f64]) + Send + Sync>,
}

impl FnOp {
    pub fn new(
        rows: usize,
        cols: usize,
        forward: impl Fn(&[f64], &mut [f64]) + Send + Sync + 'static,
        adjoint: impl Fn(&[f64], &mut [f64]) + Send + Sync + 'static,
    ) -> Self {
        FnOp { rows, cols, forward: Box::new(forward), adjoint: Box::new(adjoint) }
    }
}

impl LinearOperator for FnOp {
    fn rows(&self) -> usize {
        self.rows
    }
    fn cols(&self) -> usize {
        self.cols
    }
    fn apply_into(&self, v: &[f64], out: &mut [f64]) {
        assert_eq!(v.len(), self.cols, "apply: got {}, expected {}", v.len(), self.cols);
        (self.forward)(v, out);
    }
    fn apply_adjoint_into(&self, v: &[f64], out: &mut [f64]) {
        assert_eq!(v.len(), self.rows, "apply_adjoint: got {}, expected {}", v.len(), self.rows);
        (self.adjoint)(v, out);
    }
}

/// Thread-safe forward/adjoint product counter.
#[derive(Debug, Default)]
pub struct MatvecCounter {
    forward: AtomicU64,
    adjoint: AtomicU64,
}

impl MatvecCounter {
    pub fn new() -> Arc<Self> {
        Arc::new(MatvecCounter::default())
    }

    pub fn forward(&self) -> u64 {
        self.forward.load(Ordering::Relaxed)
    }

    pub fn adjoint(&self) -> u64 {
        self.adjoint.load(Ordering::Relaxed)
    }

    /// Forward plus adjoint applications.
    pub fn total(&self) -> u64 {
        self.forward() + self.adjoint()
    }

    pub fn reset(&self) {
        self.forward.store(0, Ordering::Relaxed);
        self.adjoint.store(0, Ordering::Relaxed);
    }
}

/// Wrapper that counts every product of the inner operator.
///
/// Row extraction through [`LinearOperator::try_row`] is forwarded without
/// counting: it touches a single row, not the whole operator.
pub struct CountedOp {
    inner: Arc<dyn LinearOperator>,
    counter: Arc<MatvecCounter>,
}

impl CountedOp {
    pub fn new(inner: Arc<dyn LinearOperator>, counter: Arc<MatvecCounter>) -> Self {
        CountedOp { inner, counter }
    }

    pub fn counter(&self) -> &Arc<MatvecCounter> {
        &self.counter
    }
}

impl LinearOperator for CountedOp {
    fn rows(&self) -> usize {
        self.inner.rows()
    }
    fn cols(&self) -> usize {
        self.inner.cols()
    }
    fn apply_into(&self, v: &[f64], out: &mut [f64]) {
        self.counter.forward.fetch_add(1, Ordering::Relaxed);
        self.inner.apply_into(v, out);
    }
    fn apply_adjoint_into(&self, v: &[f64], out: &mut [f64]) {
        self.counter.adjoint.fetch_add(1, Ordering::Relaxed);
        self.inner.apply_adjoint_into(v, out);
    }
    fn try_row(&self, i: usize, out: &mut [f64]) -> bool {
        self.inner.try_row(i, out)
    }
}

/// Regularized normal-equations operator
/// `N_delta = A diag(d_reg)^-1 A' + delta I` with
/// `d_reg = Q_diag + theta_inv + rho`.
///
/// The reciprocal of `d_reg` is computed once at construction; `apply`
/// performs exactly one adjoint and one forward product of `A` (in that
/// order) plus the `delta` shift.  The operator is symmetric, and for any
/// `v` it satisfies `<v, N_delta v> >= delta |v|^2`.
pub struct NormalEqOp {
    a: Arc<dyn LinearOperator>,
    d_reg_inv: Vec<f64>,
    delta: f64,
}

impl NormalEqOp {
    /// Builds from an explicit regularized diagonal `d_reg`; every entry
    /// must be strictly positive.
    pub fn from_d_reg(a: Arc<dyn LinearOperator>, d_reg: &[f64], delta: f64) -> Result<Self, Error> {
        assert_eq!(
            d_reg.len(),
            a.cols(),
            "NormalEqOp: d_reg length {} does not match operator columns {}",
            d_reg.len(),
            a.cols()
        );
        if !delta.is_finite() || delta < 0.0 {
            return Err(Error::InvalidParameter(format!("delta = {delta:e} must be finite and >= 0")));
        }
        let mut d_reg_inv = Vec::with_capacity(d_reg.len());
        for (j, &d) in d_reg.iter().enumerate() {
            if !(d > 0.0) || !d.is_finite() {
                return Err(Error::NonpositiveScaling { index: j, value: d });
            }
            d_reg_inv.push(1.0 / d);
        }
        Ok(NormalEqOp { a, d_reg_inv, delta })
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn d_reg_inv(&self) -> &[f64] {
        &self.d_reg_inv
    }

    pub fn a(&self) -> &Arc<dyn LinearOperator> {
        &self.a
    }

    /// `out = diag(d_reg)^-1 v`; the inner scaling the solver also needs
    /// when recovering primal directions.
    pub fn scale_into(&self, v: &[f64], out: &mut [f64]) {
        assert_eq!(v.len(), self.d_reg_inv.len(), "scale: got {}, expected {}", v.len(), self.d_reg_inv.len());
        for ((o, x), r) in out.iter_mut().zip(v).zip(&self.d_reg_inv) {
            *o = x * r;
        }
    }
}

impl LinearOperator for NormalEqOp {
    fn rows(&self) -> usize {
        self.a.rows()
    }
    fn cols(&self) -> usize {
        self.a.rows()
    }

    fn apply_into(&self, v: &[f64], out: &mut [f64]) {
        assert_eq!(v.len(), self.a.rows(), "apply: got {}, expected {}", v.len(), self.a.rows());
        let mut t = vec![0.0; self.a.cols()];
        self.a.apply_adjoint_into(v, &mut t);
        for (tj, r) in t.iter_mut().zip(&self.d_reg_inv) {
            *tj *= r;
        }
        self.a.apply_into(&t, out);
        crate::vecops::axpy(self.delta, v, out);
    }

    fn apply_adjoint_into(&self, v: &[f64], out: &mut [f64]) {
        self.apply_into(v, out);
    }
}

/// Wraps a dense row-major matrix as an operator.
pub fn make_dense_operator(rows: usize, cols: usize, data: Vec<f64>) -> DenseOp {
    DenseOp::new(rows, cols, data)
}

/// Builds the normal-equations operator from the solver's diagonal pieces:
/// `d_reg = q_diag + theta_inv + rho`.  Fails with the offending index if
/// any combined entry is not strictly positive.
pub fn make_normal_operator(
    a: Arc<dyn LinearOperator>,
    q_diag: &[f64],
    theta_inv: &[f64],
    rho: f64,
    delta: f64,
) -> Result<NormalEqOp, Error> {
    assert_eq!(q_diag.len(), theta_inv.len(), "q_diag/theta_inv length mismatch");
    let d_reg: Vec<f64> = q_diag.iter().zip(theta_inv).map(|(q, t)| q + t + rho).collect();
    NormalEqOp::from_d_reg(a, &d_reg, delta)
}

/// Maximum relative adjoint-consistency defect `|<Au,v> - <u,A'v>|` over
/// seeded Gaussian probe pairs.
pub fn adjoint_consistency_defect(op: &dyn LinearOperator, probes: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0_f64;
    for _ in 0..probes {
        let u: Vec<f64> = (0..op.cols()).map(|_| standard_normal(&mut rng)).collect();
        let v: Vec<f64> = (0..op.rows()).map(|_| standard_normal(&mut rng)).collect();
        let au = op.apply(&u);
        let atv = op.apply_adjoint(&v);
        let d1 = crate::vecops::dot(&au, &v);
        let d2 = crate::vecops::dot(&u, &atv);
        let scale = 1.0 + d1.abs().max(d2.abs());
        worst = worst.max((d1 - d2).abs() / scale);
    }
    worst
}

/// Standard normal draw via the Box-Muller transform.  Consumes exactly two
/// uniform draws per sample, so the position in the randomness stream after
/// `k` samples depends only on `k`; sketch columns generated sequentially
/// are therefore a prefix of any longer sketch from the same seed.
pub(crate) fn standard_normal(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn example_dense() -> DenseOp {
        // 2x3 matrix [[1,2,3],[4,5,6]]
        DenseOp::new(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0])
    }

    #[test]
    fn dense_apply_and_adjoint() {
        let a = example_dense();
        assert_eq!(a.apply(&[1.0, 0.0, -1.0]), vec![-2.0, -2.0]);
        assert_eq!(a.apply_adjoint(&[1.0, 1.0]), vec![5.0, 7.0, 9.0]);
    }

    #[test]
    #[should_panic(expected = "apply: vector length 2 does not match operator columns 3")]
    fn dense_apply_dimension_mismatch_panics() {
        example_dense().apply(&[1.0, 0.0]);
    }

    #[test]
    fn csc_matches_dense() {
        let cols = vec![
            vec![(0, 1.0), (1, 4.0)],
            vec![(0, 2.0), (1, 5.0)],
            vec![(0, 3.0), (1, 6.0)],
        ];
        let s = CscMatrix::from_columns(2, &cols);
        let d = example_dense();
        let v = [0.5, -1.0, 2.0];
        assert_eq!(s.apply(&v), d.apply(&v));
        let w = [1.0, -2.0];
        assert_eq!(s.apply_adjoint(&w), d.apply_adjoint(&w));
        assert_eq!(s.nnz(), 6);
    }

    #[test]
    fn diagonal_operator_scales() {
        let d = DiagonalOperator::new(vec![2.0, -3.0]);
        assert_eq!(d.apply(&[1.0, 1.0]), vec![2.0, -3.0]);
        assert_eq!(d.apply_adjoint(&[1.0, 2.0]), vec![2.0, -6.0]);
    }

    #[test]
    fn counter_counts_each_direction() {
        let counter = MatvecCounter::new();
        let op = CountedOp::new(Arc::new(example_dense()), counter.clone());
        let _ = op.apply(&[1.0, 1.0, 1.0]);
        let _ = op.apply(&[1.0, 0.0, 0.0]);
        let _ = op.apply_adjoint(&[1.0, 0.0]);
        assert_eq!(counter.forward(), 2);
        assert_eq!(counter.adjoint(), 1);
        assert_eq!(counter.total(), 3);
        counter.reset();
        assert_eq!(counter.total(), 0);
    }

    #[test]
    fn normal_operator_row_example() {
        // A = [[1, 1]], d_reg = 1 + 0 + 0, delta = 0.5: N v = 2 v + 0.5 v.
        let a: Arc<dyn LinearOperator> = Arc::new(DenseOp::new(1, 2, vec![1.0, 1.0]));
        let n = make_normal_operator(a, &[0.0, 0.0], &[1.0, 1.0], 0.0, 0.5).unwrap();
        assert_eq!(n.apply(&[1.0]), vec![2.5]);
    }

    #[test]
    fn normal_operator_identity_example() {
        // A = I2, d_reg = 2 each, delta = 1: N v = v/2 + v = 1.5 v.
        let a: Arc<dyn LinearOperator> = Arc::new(DenseOp::new(2, 2, vec![1.0, 0.0, 0.0, 1.0]));
        let n = make_normal_operator(a, &[1.0, 1.0], &[1.0, 1.0], 0.0, 1.0).unwrap();
        assert_eq!(n.apply(&[2.0, 2.0]), vec![3.0, 3.0]);
    }

    #[test]
    fn normal_operator_rejects_nonpositive_scaling() {
        let a: Arc<dyn LinearOperator> = Arc::new(DenseOp::new(1, 2, vec![1.0, 1.0]));
        let err = match make_normal_operator(a, &[0.0, 1.0], &[0.0, 0.0], 0.0, 0.1) {
            Err(e) => e,
            Ok(_) => panic!("expected nonpositive-scaling error"),
        };
        match err {
            Error::NonpositiveScaling { index, value } => {
                assert_eq!(index, 0);
                assert_eq!(value, 0.0);
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn normal_operator_counts_one_product_pair_per_apply() {
        let counter = MatvecCounter::new();
        let a: Arc<dyn LinearOperator> = Arc::new(CountedOp::new(
            Arc::new(DenseOp::new(2, 3, vec![1.0, 0.0, 2.0, 0.0, 1.0, -1.0])),
            counter.clone(),
        ));
        let n = make_normal_operator(a, &[1.0, 1.0, 1.0], &[0.0, 0.0, 0.0], 0.0, 0.25).unwrap();
        let _ = n.apply(&[1.0, 2.0]);
        assert_eq!(counter.forward(), 1);
        assert_eq!(counter.adjoint(), 1);
    }

    #[test]
    fn normal_operator_is_coercive() {
        let a: Arc<dyn LinearOperator> = Arc::new(DenseOp::new(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]));
        let delta = 0.7;
        let n = make_normal_operator(a, &[0.5, 0.0, 1.0], &[0.1, 0.9, 0.0], 0.2, delta).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..50 {
            let v: Vec<f64> = (0..2).map(|_| standard_normal(&mut rng)).collect();
            let nv = n.apply(&v);
            let quad = crate::vecops::dot(&v, &nv);
            let vv = crate::vecops::dot(&v, &v);
            assert!(quad >= delta * vv - 1e-12 * vv, "coercivity violated: {quad} < {}", delta * vv);
        }
    }

    #[test]
    fn adjoint_defect_small_for_consistent_operator() {
        let a = example_dense();
        assert!(adjoint_consistency_defect(&a, 5, 3) < 1e-14);
    }

    #[test]
    fn adjoint_defect_flags_inconsistent_operator() {
        // Adjoint deliberately wrong by a factor 2.
        let op = FnOp::new(
            2,
            2,
            |v, out| {
                out[0] = v[0];
                out[1] = v[1];
            },
            |v, out| {
                out[0] = 2.0 * v[0];
                out[1] = 2.0 * v[1];
            },
        );
        assert!(adjoint_consistency_defect(&op, 3, 1) > 1e-2);
    }
}
