//! Output-weight solvers: minimal-norm least squares through the
//! Moore-Penrose pseudoinverse, a closed-form ridge solution, and an online
//! rank-one recursive least-squares update that converges to the ridge
//! solution.

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::error::{dimension, domain, validation, Result};

/// Ridge parameter used by online training unless overridden.
pub const DEFAULT_ONLINE_REGULARIZATION: f64 = 1e-8;

/// Desired soma values, `N x K`, nominally `0` or the spike amplitude.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetSignal(pub DMatrix<f64>);

impl TargetSignal {
    pub fn new(values: DMatrix<f64>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(domain("target signal must be finite"));
        }
        Ok(TargetSignal(values))
    }

    pub fn zeros(num_outputs: usize, num_steps: usize) -> Self {
        TargetSignal(DMatrix::zeros(num_outputs, num_steps))
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn num_outputs(&self) -> usize {
        self.0.nrows()
    }

    pub fn num_steps(&self) -> usize {
        self.0.ncols()
    }

    /// Column-wise concatenation of several targets.
    pub fn concat(parts: &[TargetSignal]) -> Result<TargetSignal> {
        let first = parts
            .first()
            .ok_or_else(|| validation("nothing to concatenate"))?;
        let n = first.num_outputs();
        if parts.iter().any(|p| p.num_outputs() != n) {
            return Err(dimension("targets differ in output count"));
        }
        let total = parts.iter().map(TargetSignal::num_steps).sum();
        let mut out = DMatrix::zeros(n, total);
        let mut col = 0;
        for p in parts {
            out.columns_mut(col, p.num_steps()).copy_from(&p.0);
            col += p.num_steps();
        }
        Ok(TargetSignal(out))
    }
}

fn check_finite(m: &DMatrix<f64>, what: &str) -> Result<()> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(domain(format!("{what} contains non-finite entries")))
    }
}

/// Default singular-value cutoff: `eps * max(M, K) * sigma_max`.
pub fn default_tolerance(shape: (usize, usize), sigma_max: f64) -> f64 {
    f64::EPSILON * shape.0.max(shape.1) as f64 * sigma_max
}

struct ThinSvd {
    u: DMatrix<f64>,
    v_t: DMatrix<f64>,
    // Reciprocals of the retained singular values, zero for discarded ones.
    inv_sigma: DVector<f64>,
}

fn thin_svd(a: &DMatrix<f64>, tol: Option<f64>) -> Result<ThinSvd> {
    check_finite(a, "matrix")?;
    if let Some(t) = tol {
        if t.is_nan() || t < 0.0 {
            return Err(domain(format!("tolerance must be >= 0, got {t}")));
        }
    }
    let (m, k) = a.shape();
    // Strongly rectangular inputs go through a Householder QR first so the
    // SVD only sees the small triangular factor.
    let (u, sigma, v_t) = if k > 2 * m {
        let qr = a.transpose().qr();
        let (q, r) = (qr.q(), qr.r());
        let svd = r.transpose().svd(true, true);
        let v_t = svd.v_t.expect("v_t requested") * q.transpose();
        (svd.u.expect("u requested"), svd.singular_values, v_t)
    } else if m > 2 * k {
        let qr = a.clone().qr();
        let (q, r) = (qr.q(), qr.r());
        let svd = r.svd(true, true);
        (
            q * svd.u.expect("u requested"),
            svd.singular_values,
            svd.v_t.expect("v_t requested"),
        )
    } else {
        let svd = a.clone().svd(true, true);
        (
            svd.u.expect("u requested"),
            svd.singular_values,
            svd.v_t.expect("v_t requested"),
        )
    };
    let sigma_max = sigma.iter().copied().fold(0.0, f64::max);
    let cutoff = tol.unwrap_or_else(|| default_tolerance(a.shape(), sigma_max));
    let inv_sigma = sigma.map(|s| if s > cutoff && s > 0.0 { 1.0 / s } else { 0.0 });
    Ok(ThinSvd { u, v_t, inv_sigma })
}

/// Moore-Penrose pseudoinverse via the singular value decomposition.
/// Singular values at or below `tol` (default [`default_tolerance`]) are
/// treated as zero.
pub fn pseudoinverse(a: &DMatrix<f64>, tol: Option<f64>) -> Result<DMatrix<f64>> {
    if a.is_empty() {
        return Ok(DMatrix::zeros(a.ncols(), a.nrows()));
    }
    let svd = thin_svd(a, tol)?;
    // A+ = V diag(1/s) U^T
    let mut v = svd.v_t.transpose();
    for (mut col, &s) in v.column_iter_mut().zip(svd.inv_sigma.iter()) {
        col *= s;
    }
    Ok(v * svd.u.transpose())
}

/// Minimal-norm least-squares output weights `W = Y A+`.
pub fn solve_batch(a: &DMatrix<f64>, y: &DMatrix<f64>, tol: Option<f64>) -> Result<DMatrix<f64>> {
    if a.ncols() != y.ncols() {
        return Err(dimension(format!(
            "activations have {} columns but targets have {}",
            a.ncols(),
            y.ncols()
        )));
    }
    check_finite(y, "target")?;
    if a.is_empty() {
        return Ok(DMatrix::zeros(y.nrows(), a.nrows()));
    }
    let svd = thin_svd(a, tol)?;
    // W = (Y V) diag(1/s) U^T, without materialising the K x M pseudoinverse.
    let mut yv = y * svd.v_t.transpose();
    for (mut col, &s) in yv.column_iter_mut().zip(svd.inv_sigma.iter()) {
        col *= s;
    }
    Ok(yv * svd.u.transpose())
}

/// Closed-form ridge solution `W = Y A^T (A A^T + lambda I)^{-1}`.
pub fn solve_ridge(a: &DMatrix<f64>, y: &DMatrix<f64>, lambda: f64) -> Result<DMatrix<f64>> {
    if !(lambda.is_finite() && lambda > 0.0) {
        return Err(validation(format!(
            "ridge parameter must be > 0, got {lambda}"
        )));
    }
    if a.ncols() != y.ncols() {
        return Err(dimension(format!(
            "activations have {} columns but targets have {}",
            a.ncols(),
            y.ncols()
        )));
    }
    check_finite(a, "activation matrix")?;
    check_finite(y, "target")?;
    let m = a.nrows();
    let gram = a * a.transpose() + DMatrix::identity(m, m) * lambda;
    let rhs = a * y.transpose();
    let chol = Cholesky::new(gram)
        .ok_or_else(|| domain("regularized Gram matrix is not positive definite"))?;
    Ok(chol.solve(&rhs).transpose())
}

/// `||W A - Y||_F`.
pub fn residual_norm(w: &DMatrix<f64>, a: &DMatrix<f64>, y: &DMatrix<f64>) -> Result<f64> {
    if w.ncols() != a.nrows() || w.nrows() != y.nrows() || a.ncols() != y.ncols() {
        return Err(dimension("residual operands have inconsistent shapes"));
    }
    Ok((w * a - y).norm())
}

/// Running state of the recursive least-squares solver.
#[derive(Debug, Clone, PartialEq)]
pub struct OnlineSolverState {
    /// Running inverse of `A A^T + lambda I`.
    pub inverse_correlation: DMatrix<f64>,
    pub weights: DMatrix<f64>,
    pub samples_seen: usize,
    pub regularization: f64,
}

impl OnlineSolverState {
    pub fn new(num_dendrites: usize, num_outputs: usize, regularization: f64) -> Result<Self> {
        if !(regularization.is_finite() && regularization > 0.0) {
            return Err(validation(format!(
                "regularization must be > 0, got {regularization}"
            )));
        }
        if num_dendrites == 0 || num_outputs == 0 {
            return Err(validation(
                "online solver needs at least one dendrite and one output",
            ));
        }
        Ok(OnlineSolverState {
            inverse_correlation: DMatrix::identity(num_dendrites, num_dendrites) / regularization,
            weights: DMatrix::zeros(num_outputs, num_dendrites),
            samples_seen: 0,
            regularization,
        })
    }

    pub fn num_dendrites(&self) -> usize {
        self.weights.ncols()
    }

    pub fn num_outputs(&self) -> usize {
        self.weights.nrows()
    }

    /// Absorbs one activation column `a` with target column `y`.
    pub fn update(&mut self, a: &[f64], y: &[f64]) -> Result<()> {
        if a.len() != self.num_dendrites() || y.len() != self.num_outputs() {
            return Err(dimension(format!(
                "update expects {} activations and {} targets, got {} and {}",
                self.num_dendrites(),
                self.num_outputs(),
                a.len(),
                y.len()
            )));
        }
        if a.iter().chain(y).any(|v| !v.is_finite()) {
            return Err(domain("online update received non-finite values"));
        }
        self.samples_seen += 1;
        if a.iter().all(|&v| v == 0.0) {
            return Ok(());
        }
        let a = DVector::from_column_slice(a);
        let y = DVector::from_column_slice(y);
        let pa = &self.inverse_correlation * &a;
        let denom = 1.0 + a.dot(&pa);
        let gain = &pa / denom;
        let err = y - &self.weights * &a;
        self.weights.ger(1.0, &err, &gain, 1.0);
        self.inverse_correlation.ger(-1.0, &gain, &pa, 1.0);
        let p = &mut self.inverse_correlation;
        let m = p.nrows();
        for i in 0..m {
            for j in (i + 1)..m {
                let s = 0.5 * (p[(i, j)] + p[(j, i)]);
                p[(i, j)] = s;
                p[(j, i)] = s;
            }
        }
        Ok(())
    }

    /// Streams every column of `a`/`y` through [`OnlineSolverState::update`].
    pub fn update_all(&mut self, a: &DMatrix<f64>, y: &DMatrix<f64>) -> Result<()> {
        if a.ncols() != y.ncols() {
            return Err(dimension("activation and target column counts differ"));
        }
        for t in 0..a.ncols() {
            let col_a: Vec<f64> = a.column(t).iter().copied().collect();
            let col_y: Vec<f64> = y.column(t).iter().copied().collect();
            self.update(&col_a, &col_y)?;
        }
        Ok(())
    }
}

/// Fresh online solver state: `P = I / lambda`, `W = 0`.
pub fn online_init(
    num_dendrites: usize,
    num_outputs: usize,
    regularization: f64,
) -> Result<OnlineSolverState> {
    OnlineSolverState::new(num_dendrites, num_outputs, regularization)
}
