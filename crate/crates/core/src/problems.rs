//! Problem builders and data ingestion.
//!
//! Two model families reduce to the separable-QP form the solver accepts:
//!
//! * the dual of a linear SVM with l1 penalty,
//!
//!   ```text
//!   minimize    1/2 v'v - sum(p)
//!   subject to  v - X diag(y) p = 0,   y'p = 0,
//!               v free,   0 <= p <= tau,
//!   ```
//!
//!   over variables `(v, p)` for a feature matrix `X` (d-by-n, one column
//!   per sample) and labels `y` in {-1, +1}; and
//!
//! * a factor-model portfolio problem,
//!
//!   ```text
//!   minimize    -r'x / gamma + x'Dx + y'y
//!   subject to  y = F'x,   Mx + t = u,   1'x = 1,
//!               x >= 0,   t >= 0,   y free,
//!   ```
//!
//!   over `(x, y, t)`, where the covariance is `Sigma = FF' + D`. Its
//!   normal equations have dimension `d + s + 1` regardless of the number
//!   of assets.
//!
//! Both constraint matrices are composed operators over the wrapped data;
//! nothing is materialized. The module also provides seeded synthetic
//! generators for both families, a LIBSVM-format reader/writer, and a CSV
//! dump format for whole problems.

use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::Error;
use crate::linops::{standard_normal, CscMatrix, DenseOp, LinearOperator};
use crate::nystrom::nystrom_approximation;
use crate::qp_model::{QpProblem, VarKind};

/// Data of a dual linear SVM instance.
pub struct SvmSpec {
    /// Feature matrix, d-by-n, one column per sample. Wrapped, not copied.
    pub features: Arc<dyn LinearOperator>,
    /// Labels in {-1, +1}, one per sample.
    pub labels: Vec<f64>,
    /// Box (misclassification penalty) on the dual variables; must be > 0.
    pub tau: f64,
}

/// Constraint matrix of the dual SVM,
/// `A = [[I_d, -X diag(y)], [0, y']]`, applied matrix-free.
pub struct SvmConstraintOp {
    features: Arc<dyn LinearOperator>,
    labels: Vec<f64>,
}

impl SvmConstraintOp {
    fn d(&self) -> usize {
        self.features.rows()
    }

    fn n_samples(&self) -> usize {
        self.features.cols()
    }
}

impl LinearOperator for SvmConstraintOp {
    fn rows(&self) -> usize {
        self.d() + 1
    }

    fn cols(&self) -> usize {
        self.d() + self.n_samples()
    }

    fn apply_into(&self, v: &[f64], out: &mut [f64]) {
        let d = self.d();
        let n = self.n_samples();
        assert_eq!(v.len(), d + n, "svm operator: got {}, expected {}", v.len(), d + n);
        assert_eq!(out.len(), d + 1, "svm operator: got {}, expected {}", out.len(), d + 1);
        let (v_block, p_block) = v.split_at(d);
        // X (y . p)
        let yp: Vec<f64> = p_block.iter().zip(&self.labels).map(|(p, y)| p * y).collect();
        let xyp = self.features.apply(&yp);
        for i in 0..d {
            out[i] = v_block[i] - xyp[i];
        }
        out[d] = p_block.iter().zip(&self.labels).map(|(p, y)| p * y).sum();
    }

    fn apply_adjoint_into(&self, v: &[f64], out: &mut [f64]) {
        let d = self.d();
        let n = self.n_samples();
        assert_eq!(v.len(), d + 1, "svm adjoint: got {}, expected {}", v.len(), d + 1);
        assert_eq!(out.len(), d + n, "svm adjoint: got {}, expected {}", out.len(), d + n);
        let (a, beta) = (&v[..d], v[d]);
        out[..d].copy_from_slice(a);
        let xta = self.features.apply_adjoint(a);
        for j in 0..n {
            out[d + j] = self.labels[j] * (beta - xta[j]);
        }
    }

    fn try_row(&self, i: usize, out: &mut [f64]) -> bool {
        let d = self.d();
        let n = self.n_samples();
        assert_eq!(out.len(), d + n, "svm row: got {}, expected {}", out.len(), d + n);
        out.fill(0.0);
        if i < d {
            let mut xrow = vec![0.0; n];
            if !self.features.try_row(i, &mut xrow) {
                return false;
            }
            out[i] = 1.0;
            for j in 0..n {
                out[d + j] = -self.labels[j] * xrow[j];
            }
        } else {
            out[d..].copy_from_slice(&self.labels);
        }
        true
    }
}

/// Builds the dual SVM QP over `(v, p)`: `Q = diag(1_d, 0_n)`,
/// `c = (0_d, -1_n)`, `b = 0_{d+1}`, `v` free, `0 <= p <= tau`.
pub fn build_svm_qp(spec: SvmSpec) -> Result<QpProblem, Error> {
    let d = spec.features.rows();
    let n = spec.features.cols();
    if spec.labels.len() != n {
        return Err(Error::Data(format!(
            "label count {} does not match sample count {n}",
            spec.labels.len()
        )));
    }
    for (i, &y) in spec.labels.iter().enumerate() {
        if y != 1.0 && y != -1.0 {
            return Err(Error::Data(format!("label of sample {i} is {y}, expected -1 or +1")));
        }
    }
    if !(spec.tau > 0.0 && spec.tau.is_finite()) {
        return Err(Error::InvalidParameter(format!("tau must be positive, got {}", spec.tau)));
    }

    let mut q_diag = vec![0.0; d + n];
    q_diag[..d].fill(1.0);
    let mut c = vec![0.0; d + n];
    c[d..].fill(-1.0);
    let mut u = vec![0.0; d + n];
    u[d..].fill(spec.tau);
    let a = Arc::new(SvmConstraintOp { features: spec.features, labels: spec.labels })
        as Arc<dyn LinearOperator>;
    QpProblem::new(
        q_diag,
        a,
        vec![0.0; d + 1],
        c,
        (0..d).collect(),
        Vec::new(),
        (d..d + n).collect(),
        u,
    )
}

/// Data of a factor-model portfolio instance.
pub struct PortfolioSpec {
    /// Expected returns, one per asset.
    pub returns: Vec<f64>,
    /// Factor loadings, n-by-s.
    pub factors: DMatrix<f64>,
    /// Asset-specific risk (diagonal of D); entries must be >= 0.
    pub asset_risk: Vec<f64>,
    /// Correlation constraints: each of the d rows is another portfolio.
    pub correlations: DMatrix<f64>,
    /// Upper bounds for the correlation rows.
    pub correlation_caps: Vec<f64>,
    /// Risk-aversion parameter; must be > 0.
    pub gamma: f64,
}

/// Constraint matrix of the reformulated portfolio QP over `(x, y, t)`:
/// rows `F'x - y = 0`, `Mx + t = u`, `1'x = 1`.
pub struct PortfolioConstraintOp {
    factors: DMatrix<f64>,
    correlations: DMatrix<f64>,
}

impl PortfolioConstraintOp {
    fn n_assets(&self) -> usize {
        self.factors.nrows()
    }

    fn s_factors(&self) -> usize {
        self.factors.ncols()
    }

    fn d_rows(&self) -> usize {
        self.correlations.nrows()
    }
}

impl LinearOperator for PortfolioConstraintOp {
    fn rows(&self) -> usize {
        self.s_factors() + self.d_rows() + 1
    }

    fn cols(&self) -> usize {
        self.n_assets() + self.s_factors() + self.d_rows()
    }

    fn apply_into(&self, v: &[f64], out: &mut [f64]) {
        let (n, s, d) = (self.n_assets(), self.s_factors(), self.d_rows());
        assert_eq!(v.len(), n + s + d, "portfolio operator: got {}, expected {}", v.len(), n + s + d);
        assert_eq!(out.len(), s + d + 1, "portfolio operator: got {}, expected {}", out.len(), s + d + 1);
        let x = DVector::from_column_slice(&v[..n]);
        let ftx = self.factors.tr_mul(&x);
        for k in 0..s {
            out[k] = ftx[k] - v[n + k];
        }
        let mx = &self.correlations * &x;
        for i in 0..d {
            out[s + i] = mx[i] + v[n + s + i];
        }
        out[s + d] = v[..n].iter().sum();
    }

    fn apply_adjoint_into(&self, v: &[f64], out: &mut [f64]) {
        let (n, s, d) = (self.n_assets(), self.s_factors(), self.d_rows());
        assert_eq!(v.len(), s + d + 1, "portfolio adjoint: got {}, expected {}", v.len(), s + d + 1);
        assert_eq!(out.len(), n + s + d, "portfolio adjoint: got {}, expected {}", out.len(), n + s + d);
        let a = DVector::from_column_slice(&v[..s]);
        let beta = DVector::from_column_slice(&v[s..s + d]);
        let g = v[s + d];
        let fa = &self.factors * &a;
        let mtb = self.correlations.tr_mul(&beta);
        for j in 0..n {
            out[j] = fa[j] + mtb[j] + g;
        }
        for k in 0..s {
            out[n + k] = -v[k];
        }
        for i in 0..d {
            out[n + s + i] = v[s + i];
        }
    }

    fn try_row(&self, i: usize, out: &mut [f64]) -> bool {
        let (n, s, d) = (self.n_assets(), self.s_factors(), self.d_rows());
        assert_eq!(out.len(), n + s + d, "portfolio row: got {}, expected {}", out.len(), n + s + d);
        out.fill(0.0);
        if i < s {
            for j in 0..n {
                out[j] = self.factors[(j, i)];
            }
            out[n + i] = -1.0;
        } else if i < s + d {
            let row = i - s;
            for j in 0..n {
                out[j] = self.correlations[(row, j)];
            }
            out[n + s + row] = 1.0;
        } else {
            out[..n].fill(1.0);
        }
        true
    }
}

/// Builds the reformulated portfolio QP over `(x, y, t)` with
/// `Q = diag(2 D, 2 I_s, 0_d)` and `c = (-r/gamma, 0, 0)`. The normal
/// equations have dimension `d + s + 1`.
pub fn build_portfolio_qp(spec: PortfolioSpec) -> Result<QpProblem, Error> {
    let n = spec.factors.nrows();
    let s = spec.factors.ncols();
    let d = spec.correlations.nrows();
    if spec.correlations.ncols() != n {
        return Err(Error::Data(format!(
            "correlation rows have {} columns but there are {n} assets",
            spec.correlations.ncols()
        )));
    }
    if spec.returns.len() != n || spec.asset_risk.len() != n {
        return Err(Error::Data(format!(
            "returns ({}) and asset risk ({}) must both have one entry per asset ({n})",
            spec.returns.len(),
            spec.asset_risk.len()
        )));
    }
    if spec.correlation_caps.len() != d {
        return Err(Error::Data(format!(
            "{d} correlation rows but {} caps",
            spec.correlation_caps.len()
        )));
    }
    if let Some(j) = spec.asset_risk.iter().position(|&v| !(v >= 0.0)) {
        return Err(Error::InvalidParameter(format!(
            "asset risk must be nonnegative; entry {j} is {}",
            spec.asset_risk[j]
        )));
    }
    if !(spec.gamma > 0.0 && spec.gamma.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "gamma must be positive, got {}",
            spec.gamma
        )));
    }

    let total = n + s + d;
    let mut q_diag = vec![0.0; total];
    for j in 0..n {
        q_diag[j] = 2.0 * spec.asset_risk[j];
    }
    for k in 0..s {
        q_diag[n + k] = 2.0;
    }
    let mut c = vec![0.0; total];
    for j in 0..n {
        c[j] = -spec.returns[j] / spec.gamma;
    }
    let mut b = vec![0.0; s + d + 1];
    b[s..s + d].copy_from_slice(&spec.correlation_caps);
    b[s + d] = 1.0;

    let a = Arc::new(PortfolioConstraintOp {
        factors: spec.factors,
        correlations: spec.correlations,
    }) as Arc<dyn LinearOperator>;
    let mut idx_nonneg: Vec<usize> = (0..n).collect();
    idx_nonneg.extend(n + s..total);
    QpProblem::new(
        q_diag,
        a,
        b,
        c,
        (n..n + s).collect(),
        idx_nonneg,
        Vec::new(),
        vec![0.0; total],
    )
}

/// Synthetic covariance with fast-then-slow spectral decay.
///
/// Builds `Sigma = V diag(lambda) V'` with a seeded random orthogonal `V`
/// and eigenvalues `lambda_i = 1/i^2` for `i <= decay_fast`, then
/// `1e-4 / (i - decay_fast)` beyond (1-based `i`). Returns the rank-s
/// factor `F` recovered by a Nystrom approximation of `Sigma` and the
/// residual diagonal `D = diag(Sigma - FF')` clamped at zero.
pub fn synthetic_covariance(
    n: usize,
    s: usize,
    decay_fast: usize,
    seed: u64,
) -> (DMatrix<f64>, Vec<f64>) {
    assert!(s <= n, "factor count {s} exceeds asset count {n}");
    assert!(n > 0, "need at least one asset");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let g = DMatrix::from_fn(n, n, |_, _| standard_normal(&mut rng));
    let v = g.qr().q();
    let lambdas: Vec<f64> = (1..=n)
        .map(|i| {
            if i <= decay_fast {
                1.0 / (i * i) as f64
            } else {
                1e-4 / (i - decay_fast) as f64
            }
        })
        .collect();
    let mut sigma = DMatrix::zeros(n, n);
    for (i, &li) in lambdas.iter().enumerate() {
        let vi = v.column(i);
        sigma += li * &vi * vi.transpose();
    }
    // Exact symmetry, lost to rounding in the accumulation above.
    sigma = (sigma.clone() + sigma.transpose()) * 0.5;

    let op = DenseOp::from_fn(n, n, |i, j| sigma[(i, j)]);
    let factors =
        nystrom_approximation(&op, s, seed ^ 0xc0ff_ee00).expect("sketch of a PSD matrix");
    let mut f = DMatrix::zeros(n, s);
    for (k, &lam) in factors.lambda_hat.iter().enumerate() {
        let scale = lam.max(0.0).sqrt();
        for i in 0..n {
            f[(i, k)] = scale * factors.u_hat[(i, k)];
        }
    }
    let mut d_diag = vec![0.0; n];
    for i in 0..n {
        let ffi: f64 = (0..s).map(|k| f[(i, k)] * f[(i, k)]).sum();
        d_diag[i] = (sigma[(i, i)] - ffi).max(0.0);
    }
    (f, d_diag)
}

/// Seeded synthetic portfolio instance: covariance from
/// [`synthetic_covariance`], mildly positive expected returns, and
/// correlation rows drawn from the simplex with caps strictly feasible at
/// the uniform portfolio.
pub fn synthetic_portfolio(n: usize, d: usize, s: usize, seed: u64) -> PortfolioSpec {
    let (factors, asset_risk) = synthetic_covariance(n, s, s, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9);
    let returns: Vec<f64> = (0..n).map(|_| 0.1 + 0.05 * standard_normal(&mut rng)).collect();
    let mut correlations = DMatrix::zeros(d, n);
    let mut caps = vec![0.0; d];
    for i in 0..d {
        let mut row: Vec<f64> = (0..n).map(|_| standard_normal(&mut rng).abs()).collect();
        let total: f64 = row.iter().sum();
        if total > 0.0 {
            for w in &mut row {
                *w /= total;
            }
        }
        let mean = 1.0 / n as f64;
        let max = row.iter().fold(0.0f64, |a, &b| a.max(b));
        for j in 0..n {
            correlations[(i, j)] = row[j];
        }
        // The uniform portfolio attains sum(row)/n = mean, so this cap keeps
        // it strictly feasible while still binding for concentrated x.
        caps[i] = mean + 0.5 * (max - mean);
    }
    PortfolioSpec {
        returns,
        factors,
        asset_risk,
        correlations,
        correlation_caps: caps,
        gamma: 1.0,
    }
}

/// Seeded dense synthetic SVM instance with decaying feature spectrum and a
/// hyperplane labeling split at the median margin, so both classes are
/// always present for n >= 2.
pub fn synthetic_svm(n_samples: usize, n_features: usize, seed: u64) -> SvmSpec {
    assert!(n_samples >= 2, "need at least two samples");
    assert!(n_features >= 1, "need at least one feature");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = vec![0.0; n_features * n_samples];
    for (i, row) in data.chunks_mut(n_samples).enumerate() {
        let scale = 1.0 / ((i + 1) as f64).sqrt();
        for v in row.iter_mut() {
            *v = scale * standard_normal(&mut rng);
        }
    }
    let mut normal: Vec<f64> = (0..n_features).map(|_| standard_normal(&mut rng)).collect();
    let norm = normal.iter().map(|v| v * v).sum::<f64>().sqrt();
    for v in &mut normal {
        *v /= norm.max(f64::MIN_POSITIVE);
    }

    let margin = |data: &[f64], j: usize| -> f64 {
        (0..n_features).map(|i| normal[i] * data[i * n_samples + j]).sum()
    };
    let mut margins: Vec<f64> = (0..n_samples).map(|j| margin(&data, j)).collect();
    let mut sorted = margins.clone();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite margins"));
    let median = sorted[n_samples / 2];
    let labels: Vec<f64> =
        margins.iter().map(|&m| if m >= median { 1.0 } else { -1.0 }).collect();

    // Push each sample along the normal by its label to separate the
    // classes, leaving some overlap so the box constraints stay active.
    for j in 0..n_samples {
        for i in 0..n_features {
            data[i * n_samples + j] += 0.3 * labels[j] * normal[i];
        }
        margins[j] = margin(&data, j);
    }
    SvmSpec {
        features: Arc::new(DenseOp::new(n_features, n_samples, data)),
        labels,
        tau: 1.0,
    }
}

/// Reads a LIBSVM-format file: one `label idx:val idx:val ...` line per
/// sample, 1-based strictly increasing feature indices. Returns the d-by-n
/// feature matrix (one column per sample) and labels mapped to {-1, +1}.
///
/// Raw labels already in {-1, +1} pass through; otherwise exactly two
/// distinct raw values are required and the smaller maps to -1.
pub fn read_libsvm(path: impl AsRef<Path>) -> Result<(CscMatrix, Vec<f64>), Error> {
    let path = path.as_ref();
    let display = path.display().to_string();
    let file = std::fs::File::open(path)?;
    let reader = BufReader::new(file);

    let mut raw_labels: Vec<f64> = Vec::new();
    let mut columns: Vec<Vec<(usize, f64)>> = Vec::new();
    let mut max_index = 0usize;
    for (lineno, line) in reader.lines().enumerate() {
        let lineno = lineno + 1;
        let line = line?;
        let mut tokens = line.split_whitespace();
        let Some(label_tok) = tokens.next() else { continue };
        let err = |message: String| Error::Parse { path: display.clone(), line: lineno, message };
        let label: f64 = label_tok
            .parse()
            .map_err(|_| err(format!("label `{label_tok}` is not a number")))?;
        if !label.is_finite() {
            return Err(err(format!("label `{label_tok}` is not finite")));
        }
        let mut column: Vec<(usize, f64)> = Vec::new();
        for tok in tokens {
            let (idx_str, val_str) = tok
                .split_once(':')
                .ok_or_else(|| err(format!("feature `{tok}` is not in idx:val form")))?;
            let idx: usize = idx_str
                .parse()
                .map_err(|_| err(format!("feature index `{idx_str}` is not an integer")))?;
            if idx == 0 {
                return Err(err("feature indices are 1-based; found 0".into()));
            }
            let val: f64 = val_str
                .parse()
                .map_err(|_| err(format!("feature value `{val_str}` is not a number")))?;
            if !val.is_finite() {
                return Err(err(format!("feature value `{val_str}` is not finite")));
            }
            if let Some(&(prev, _)) = column.last() {
                if idx - 1 <= prev {
                    return Err(err(format!(
                        "feature indices must be strictly increasing; {idx} follows {}",
                        prev + 1
                    )));
                }
            }
            max_index = max_index.max(idx);
            column.push((idx - 1, val));
        }
        raw_labels.push(label);
        columns.push(column);
    }

    let labels = normalize_labels(&raw_labels)?;
    Ok((CscMatrix::from_columns(max_index, &columns), labels))
}

fn normalize_labels(raw: &[f64]) -> Result<Vec<f64>, Error> {
    let mut distinct: Vec<f64> = Vec::new();
    for &l in raw {
        if !distinct.contains(&l) {
            distinct.push(l);
        }
    }
    if distinct.iter().all(|&l| l == 1.0 || l == -1.0) {
        return Ok(raw.to_vec());
    }
    if distinct.len() != 2 {
        return Err(Error::Data(format!(
            "expected binary labels, found {} distinct values",
            distinct.len()
        )));
    }
    distinct.sort_by(|a, b| a.partial_cmp(b).expect("finite labels"));
    Ok(raw.iter().map(|&l| if l == distinct[0] { -1.0 } else { 1.0 }).collect())
}

/// Writes a LIBSVM-format file that [`read_libsvm`] reproduces exactly
/// (shortest round-trip float formatting).
pub fn write_libsvm(
    path: impl AsRef<Path>,
    features: &CscMatrix,
    labels: &[f64],
) -> Result<(), Error> {
    assert_eq!(
        labels.len(),
        features.cols(),
        "libsvm write: {} labels for {} samples",
        labels.len(),
        features.cols()
    );
    let mut out = BufWriter::new(std::fs::File::create(path)?);
    for j in 0..features.cols() {
        write!(out, "{}", labels[j])?;
        for (i, v) in features.column(j) {
            write!(out, " {}:{}", i + 1, v)?;
        }
        writeln!(out)?;
    }
    out.flush()?;
    Ok(())
}

/// Writes a whole problem as `field,i,j,value` CSV rows (header included).
///
/// Fields: one `dim` row carrying (n, m); `q`, `c`, `u` rows indexed by
/// variable; `b` rows indexed by constraint; `kind` rows mapping each
/// variable to 0 = free, 1 = nonnegative, 2 = boxed; `a` rows carrying the
/// nonzero constraint entries (recovered through basis products).
pub fn write_qp_csv(path: impl AsRef<Path>, problem: &QpProblem) -> Result<(), Error> {
    let n = problem.n();
    let m = problem.m();
    let mut out = BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "field,i,j,value")?;
    writeln!(out, "dim,{n},{m},0")?;
    let kinds = problem.var_kinds();
    for j in 0..n {
        let kind = match kinds[j] {
            VarKind::Free => 0,
            VarKind::NonNeg => 1,
            VarKind::Box => 2,
        };
        writeln!(out, "kind,{j},0,{kind}")?;
        if problem.q_diag[j] != 0.0 {
            writeln!(out, "q,{j},0,{}", problem.q_diag[j])?;
        }
        if problem.c[j] != 0.0 {
            writeln!(out, "c,{j},0,{}", problem.c[j])?;
        }
        if problem.u[j] != 0.0 {
            writeln!(out, "u,{j},0,{}", problem.u[j])?;
        }
    }
    for i in 0..m {
        if problem.b[i] != 0.0 {
            writeln!(out, "b,{i},0,{}", problem.b[i])?;
        }
    }
    let mut basis = vec![0.0; n];
    for j in 0..n {
        basis[j] = 1.0;
        let col = problem.a.apply(&basis);
        basis[j] = 0.0;
        for (i, &v) in col.iter().enumerate() {
            if v != 0.0 {
                writeln!(out, "a,{i},{j},{v}")?;
            }
        }
    }
    out.flush()?;
    Ok(())
}

/// Reads a problem written by [`write_qp_csv`].
pub fn read_qp_csv(path: impl AsRef<Path>) -> Result<QpProblem, Error> {
    let path = path.as_ref();
    let display = path.display().to_string();
    let file = std::fs::File::open(path)?;
    let reader = BufReader::new(file);

    let mut dims: Option<(usize, usize)> = None;
    let mut q_rows: Vec<(usize, f64)> = Vec::new();
    let mut c_rows: Vec<(usize, f64)> = Vec::new();
    let mut u_rows: Vec<(usize, f64)> = Vec::new();
    let mut b_rows: Vec<(usize, f64)> = Vec::new();
    let mut kind_rows: Vec<(usize, i64)> = Vec::new();
    let mut a_rows: Vec<(usize, usize, f64)> = Vec::new();

    for (lineno, line) in reader.lines().enumerate() {
        let lineno = lineno + 1;
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() || (lineno == 1 && trimmed == "field,i,j,value") {
            continue;
        }
        let err = |message: String| Error::Parse { path: display.clone(), line: lineno, message };
        let parts: Vec<&str> = trimmed.split(',').collect();
        if parts.len() != 4 {
            return Err(err(format!("expected 4 comma-separated fields, got {}", parts.len())));
        }
        let i: usize =
            parts[1].parse().map_err(|_| err(format!("bad index `{}`", parts[1])))?;
        let j: usize =
            parts[2].parse().map_err(|_| err(format!("bad index `{}`", parts[2])))?;
        let value: f64 =
            parts[3].parse().map_err(|_| err(format!("bad value `{}`", parts[3])))?;
        match parts[0] {
            "dim" => {
                if dims.replace((i, j)).is_some() {
                    return Err(err("duplicate dim row".into()));
                }
            }
            "q" => q_rows.push((i, value)),
            "c" => c_rows.push((i, value)),
            "u" => u_rows.push((i, value)),
            "b" => b_rows.push((i, value)),
            "kind" => kind_rows.push((i, value as i64)),
            "a" => a_rows.push((i, j, value)),
            other => return Err(err(format!("unknown field `{other}`"))),
        }
    }

    let (n, m) = dims.ok_or_else(|| Error::Data(format!("{display}: missing dim row")))?;
    let fill = |rows: &[(usize, f64)], len: usize, what: &str| -> Result<Vec<f64>, Error> {
        let mut v = vec![0.0; len];
        for &(i, value) in rows {
            if i >= len {
                return Err(Error::Data(format!("{display}: {what} index {i} out of range {len}")));
            }
            v[i] = value;
        }
        Ok(v)
    };
    let q_diag = fill(&q_rows, n, "q")?;
    let c = fill(&c_rows, n, "c")?;
    let u = fill(&u_rows, n, "u")?;
    let b = fill(&b_rows, m, "b")?;

    let mut kinds = vec![1i64; n];
    for &(j, k) in &kind_rows {
        if j >= n {
            return Err(Error::Data(format!("{display}: kind index {j} out of range {n}")));
        }
        kinds[j] = k;
    }
    let mut idx_free = Vec::new();
    let mut idx_nonneg = Vec::new();
    let mut idx_box = Vec::new();
    for (j, &k) in kinds.iter().enumerate() {
        match k {
            0 => idx_free.push(j),
            1 => idx_nonneg.push(j),
            2 => idx_box.push(j),
            other => {
                return Err(Error::Data(format!(
                    "{display}: variable {j} has unknown kind {other}"
                )))
            }
        }
    }

    let mut columns: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
    for &(i, j, v) in &a_rows {
        if i >= m || j >= n {
            return Err(Error::Data(format!(
                "{display}: constraint entry ({i}, {j}) out of range {m}x{n}"
            )));
        }
        columns[j].push((i, v));
    }
    for col in &mut columns {
        col.sort_by_key(|&(i, _)| i);
        for pair in col.windows(2) {
            if pair[0].0 == pair[1].0 {
                return Err(Error::Data(format!(
                    "{display}: duplicate constraint entry at row {}",
                    pair[0].0
                )));
            }
        }
    }
    let a = Arc::new(CscMatrix::from_columns(m, &columns)) as Arc<dyn LinearOperator>;
    QpProblem::new(q_diag, a, b, c, idx_free, idx_nonneg, idx_box, u)
}
