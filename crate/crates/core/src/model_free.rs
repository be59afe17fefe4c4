//! Correlation-based scorers: lagged cross-correlation, PCA-truncated
//! precision and the graphical lasso.
//!
//! Precision-based scores use the negated precision with a zeroed diagonal,
//! min-max normalized over the off-diagonal entries.

use ndarray::{s, Array1, Array2, ArrayView1, Axis};

use crate::dataset::ScoreMatrix;
use crate::error::{Error, Result};
use crate::linalg;
use crate::preprocess::SpikeRaster;

pub const DEFAULT_VARIANCE_KEPT: f64 = 0.80;
pub const DEFAULT_LAMBDA_FACTOR: f64 = 0.05;
pub const DEFAULT_MAX_SWEEPS: usize = 100;
pub const DEFAULT_GLASSO_TOL: f64 = 1e-4;
/// Eigenvalues below this are treated as zero by [`pca_precision`].
pub const EIGEN_FLOOR: f64 = 1e-10;

/// Pearson correlation between `x[t]` and `y[t + lag]` over the overlapping
/// window. Zero when either windowed series is constant.
pub fn lagged_correlation(x: ArrayView1<f64>, y: ArrayView1<f64>, lag: usize) -> f64 {
    let t = x.len().min(y.len());
    if lag >= t {
        return 0.0;
    }
    let len = t - lag;
    let xw = x.slice(s![..len]);
    let yw = y.slice(s![lag..lag + len]);
    let mx = xw.mean().unwrap_or(0.0);
    let my = yw.mean().unwrap_or(0.0);
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in xw.iter().zip(yw.iter()) {
        let (da, db) = (a - mx, b - my);
        sxy += da * db;
        sxx += da * da;
        syy += db * db;
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return 0.0;
    }
    // L * sigma_x * sigma_y with population deviations.
    let norm = len as f64 * (sxx / len as f64).sqrt() * (syy / len as f64).sqrt();
    sxy / norm
}

/// Lagged correlation matrix: entry `(i, j)` correlates neuron `i` with neuron
/// `j` shifted `lag` frames into the future, i.e. `j` following `i`.
pub fn lagged_correlation_matrix(data: &Array2<f64>, lag: usize) -> Result<Array2<f64>> {
    let (frames, n) = data.dim();
    if lag >= frames {
        return Err(Error::invalid(format!(
            "lag {lag} must be smaller than the series length {frames}"
        )));
    }
    let len = frames - lag;
    let lead = data.slice(s![..len, ..]);
    let follow = data.slice(s![lag.., ..]);
    let lead_mean = lead.mean_axis(Axis(0)).expect("non-empty");
    let follow_mean = follow.mean_axis(Axis(0)).expect("non-empty");
    let lead_c = &lead - &lead_mean;
    let follow_c = &follow - &follow_mean;
    let cross = lead_c.t().dot(&follow_c);
    let lead_ss: Array1<f64> = lead_c.map_axis(Axis(0), |c| c.dot(&c));
    let follow_ss: Array1<f64> = follow_c.map_axis(Axis(0), |c| c.dot(&c));
    let lf = len as f64;
    // Constant series leave rounding residue after centering; treat it as zero.
    let flat = |ss: f64, mean: f64| ss <= 1e-20 * lf * (1.0 + mean * mean);
    Ok(Array2::from_shape_fn((n, n), |(i, j)| {
        if flat(lead_ss[i], lead_mean[i]) || flat(follow_ss[j], follow_mean[j]) {
            0.0
        } else {
            cross[[i, j]] / (lf * (lead_ss[i] / lf).sqrt() * (follow_ss[j] / lf).sqrt())
        }
    }))
}

/// Directed scores from correlation at the given lags (averaged), then
/// min-max normalized with a zero diagonal.
pub fn cross_correlation_scores(raster: &SpikeRaster, lags: &[usize]) -> Result<ScoreMatrix> {
    if lags.is_empty() {
        return Err(Error::invalid("at least one lag is required"));
    }
    let data = raster.to_f64();
    let n = raster.neuron_count();
    let mut acc = Array2::<f64>::zeros((n, n));
    for &lag in lags {
        acc += &lagged_correlation_matrix(&data, lag)?;
    }
    acc /= lags.len() as f64;
    ScoreMatrix::from_raw_min_max(acc, "xcorr")
}

/// Trailing moving sum: `y[t] = x[t] + x[t-1] + ... + x[t-length+1]`,
/// truncated at the start of the series.
pub fn summation_filter(data: &Array2<f64>, length: usize) -> Array2<f64> {
    let (frames, n) = data.dim();
    let mut out = Array2::<f64>::zeros((frames, n));
    for i in 0..n {
        let mut window = 0.0;
        for t in 0..frames {
            window += data[[t, i]];
            if t >= length {
                window -= data[[t - length, i]];
            }
            out[[t, i]] = window;
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceEstimate {
    pub covariance: Array2<f64>,
    pub mean: Array1<f64>,
}

impl CovarianceEstimate {
    pub fn new(covariance: Array2<f64>, mean: Array1<f64>) -> Result<Self> {
        let n = covariance.nrows();
        if !covariance.is_square() || mean.len() != n {
            return Err(Error::invalid(
                "covariance must be square and match the mean length",
            ));
        }
        for i in 0..n {
            if covariance[[i, i]] < 0.0 {
                return Err(Error::invalid("covariance diagonal must be nonnegative"));
            }
            for j in 0..i {
                if (covariance[[i, j]] - covariance[[j, i]]).abs() > 1e-12 {
                    return Err(Error::invalid("covariance must be symmetric"));
                }
            }
        }
        Ok(Self { covariance, mean })
    }

    pub fn dim(&self) -> usize {
        self.covariance.nrows()
    }

    pub fn max_abs_off_diagonal(&self) -> f64 {
        self.covariance
            .indexed_iter()
            .filter(|((i, j), _)| i != j)
            .map(|(_, v)| v.abs())
            .fold(0.0, f64::max)
    }

    fn mean_abs_off_diagonal(&self) -> f64 {
        let n = self.dim();
        if n < 2 {
            return 0.0;
        }
        let total: f64 = self
            .covariance
            .indexed_iter()
            .filter(|((i, j), _)| i != j)
            .map(|(_, v)| v.abs())
            .sum();
        total / (n * (n - 1)) as f64
    }
}

/// Population covariance (`1/T` normalization) of the columns of `data`.
pub fn empirical_covariance(data: &Array2<f64>) -> Result<CovarianceEstimate> {
    let frames = data.nrows();
    if frames < 2 {
        return Err(Error::invalid("covariance needs at least 2 samples"));
    }
    let mean = data.mean_axis(Axis(0)).expect("non-empty");
    let centered = data - &mean;
    let mut cov = centered.t().dot(&centered) / frames as f64;
    // Exact symmetry regardless of summation order.
    let n = cov.nrows();
    for i in 0..n {
        for j in 0..i {
            let v = 0.5 * (cov[[i, j]] + cov[[j, i]]);
            cov[[i, j]] = v;
            cov[[j, i]] = v;
        }
    }
    CovarianceEstimate::new(cov, mean)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PrecisionMethod {
    Pca,
    Glasso,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrecisionEstimate {
    pub theta: Array2<f64>,
    pub regularization: f64,
    pub method: PrecisionMethod,
}

/// Precision from the leading principal components: the smallest set of
/// components whose eigenvalues explain at least `variance_kept` of the
/// total variance, each contributing `v v^T / lambda`.
pub fn pca_precision(cov: &CovarianceEstimate, variance_kept: f64) -> Result<PrecisionEstimate> {
    if !(variance_kept > 0.0 && variance_kept <= 1.0) {
        return Err(Error::invalid(format!(
            "variance_kept must be in (0, 1], got {variance_kept}"
        )));
    }
    let (values, vectors) = linalg::sorted_symmetric_eigen(&cov.covariance);
    if values.iter().all(|&v| v < EIGEN_FLOOR) {
        return Err(Error::Numerical(
            "degenerate covariance: every eigenvalue is below 1e-10".into(),
        ));
    }
    let total: f64 = values.iter().filter(|&&v| v > 0.0).sum();
    let mut kept = values.len();
    let mut running = 0.0;
    for (k, &v) in values.iter().enumerate() {
        running += v.max(0.0);
        if running / total >= variance_kept - 1e-12 {
            kept = k + 1;
            break;
        }
    }
    let n = cov.dim();
    let mut theta = Array2::<f64>::zeros((n, n));
    for (k, &lambda) in values.iter().enumerate().take(kept) {
        if lambda < EIGEN_FLOOR {
            continue;
        }
        let v = vectors.column(k);
        for i in 0..n {
            for j in 0..n {
                theta[[i, j]] += v[i] * v[j] / lambda;
            }
        }
    }
    Ok(PrecisionEstimate {
        theta,
        regularization: 0.0,
        method: PrecisionMethod::Pca,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GlassoConfig {
    pub lambda: f64,
    pub max_sweeps: usize,
    pub tol: f64,
}

impl GlassoConfig {
    pub fn new(lambda: f64) -> Self {
        Self {
            lambda,
            max_sweeps: DEFAULT_MAX_SWEEPS,
            tol: DEFAULT_GLASSO_TOL,
        }
    }
}

/// `factor * max |S_ij|` over the off-diagonal entries.
pub fn relative_lambda(cov: &CovarianceEstimate, factor: f64) -> f64 {
    factor * cov.max_abs_off_diagonal()
}

#[derive(Debug, Clone, PartialEq)]
pub struct GlassoFit {
    pub precision: PrecisionEstimate,
    /// Penalized log-likelihood at the start and after every sweep.
    pub objective_trace: Vec<f64>,
    pub sweeps: usize,
    pub converged: bool,
    /// Diagonal loading that was needed to reach a positive definite fit.
    pub ridge: f64,
}

/// `log det(theta) - tr(S theta) - lambda * sum_{i != j} |theta_ij|`, or
/// `-inf` when `theta` is not positive definite.
pub fn glasso_objective(cov: &Array2<f64>, theta: &Array2<f64>, lambda: f64) -> f64 {
    let Some(log_det) = linalg::spd_log_det(theta) else {
        return f64::NEG_INFINITY;
    };
    let trace: f64 = (cov * theta).sum();
    let l1: f64 = theta
        .indexed_iter()
        .filter(|((i, j), _)| i != j)
        .map(|(_, v)| v.abs())
        .sum();
    log_det - trace - lambda * l1
}

fn soft_threshold(x: f64, t: f64) -> f64 {
    if x > t {
        x - t
    } else if x < -t {
        x + t
    } else {
        0.0
    }
}

/// l1-penalized Gaussian maximum likelihood for the precision matrix with an
/// unpenalized diagonal.
///
/// Each sweep runs the covariance-side column updates (a lasso per column on
/// the working covariance `W`, solved by cyclic coordinate descent) and
/// assembles the implied precision. That candidate is kept only if it does
/// not lower the penalized likelihood; otherwise the sweep falls back to exact
/// block ascent on the precision itself, which cannot lower it. The returned
/// objective trace is therefore nondecreasing and every iterate is positive
/// definite.
///
/// Sweeps stop once the mean absolute change of `W` drops below
/// `tol * mean |S_offdiag|`. If the fit is not positive definite (singular
/// `S` with tiny `lambda`), a growing ridge is added to the diagonal of `S`.
pub fn graphical_lasso(cov: &CovarianceEstimate, config: &GlassoConfig) -> Result<GlassoFit> {
    if !(config.lambda >= 0.0) || !config.lambda.is_finite() {
        return Err(Error::invalid(format!(
            "lambda must be >= 0, got {}",
            config.lambda
        )));
    }
    let n = cov.dim();
    if n == 0 {
        return Err(Error::invalid("empty covariance"));
    }
    let scale = {
        let d = cov.covariance.diag().mean().unwrap_or(0.0);
        if d > 0.0 {
            d
        } else {
            1.0
        }
    };
    // Without a penalty the likelihood is unbounded on a singular S.
    let unbounded =
        config.lambda == 0.0 && linalg::symmetric_condition_number(&cov.covariance) > 1e12;
    let mut last_err = None;
    for ridge in [0.0, 1e-8, 1e-6, 1e-4, 1e-2].map(|r| r * scale) {
        if unbounded && ridge == 0.0 {
            continue;
        }
        let mut s = cov.covariance.clone();
        s.diag_mut().mapv_inplace(|d| d + ridge);
        if s.diag().iter().any(|&d| d <= 0.0) {
            continue;
        }
        match glasso_bcd(&s, cov.mean_abs_off_diagonal(), config) {
            Ok((theta, trace, sweeps, converged)) => {
                return Ok(GlassoFit {
                    precision: PrecisionEstimate {
                        theta,
                        regularization: config.lambda,
                        method: PrecisionMethod::Glasso,
                    },
                    objective_trace: trace,
                    sweeps,
                    converged,
                    ridge,
                })
            }
            Err(e) => last_err = Some(e),
        }
    }
    Err(last_err.unwrap_or_else(|| {
        Error::Numerical("graphical lasso could not reach a positive definite estimate".into())
    }))
}

type BcdOutput = (Array2<f64>, Vec<f64>, usize, bool);

fn glasso_bcd(s: &Array2<f64>, mean_abs_off: f64, config: &GlassoConfig) -> Result<BcdOutput> {
    let n = s.nrows();
    let lambda = config.lambda;
    let mut theta = Array2::<f64>::zeros((n, n));
    for i in 0..n {
        theta[[i, i]] = 1.0 / s[[i, i]];
    }
    let mut objective = glasso_objective(s, &theta, lambda);
    let mut trace = vec![objective];
    if n == 1 {
        return Ok((theta, trace, 0, true));
    }

    // Covariance-side state: working covariance and one lasso solution per column.
    let mut w = s.clone();
    let mut betas = Array2::<f64>::zeros((n, n));
    let mut ws = ColumnWorkspace::new(n);
    let mut sweeps = 0;
    let mut converged = false;

    while sweeps < config.max_sweeps {
        sweeps += 1;
        let w_before = w.clone();

        covariance_sweep(s, lambda, &mut w, &mut betas, &mut ws);
        let candidate = precision_from_covariance_state(&w, &betas);
        let candidate_objective = glasso_objective(s, &candidate, lambda);

        if candidate_objective >= objective {
            theta = candidate;
            objective = candidate_objective;
        } else {
            // The covariance-side iterate does not improve the penalized
            // likelihood; take an exact block-ascent step on theta instead.
            precision_sweep(s, lambda, &mut theta, &mut ws)?;
            objective = glasso_objective(s, &theta, lambda);
            w = linalg::spd_inverse(&theta).ok_or_else(|| {
                Error::Numerical("graphical lasso iterate lost positive definiteness".into())
            })?;
            for j in 0..n {
                for i in 0..n {
                    betas[[i, j]] = if i == j {
                        0.0
                    } else {
                        -theta[[i, j]] / theta[[j, j]]
                    };
                }
            }
        }
        if !objective.is_finite() || theta.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("graphical lasso diverged".into()));
        }
        trace.push(objective);
        let change = (&w - &w_before).mapv(f64::abs).mean().unwrap_or(0.0);
        if change <= config.tol * mean_abs_off {
            converged = true;
            break;
        }
    }
    Ok((theta, trace, sweeps, converged))
}

struct ColumnWorkspace {
    others: Vec<usize>,
    a: Array2<f64>,
    b: Vec<f64>,
    u: Vec<f64>,
    au: Vec<f64>,
}

impl ColumnWorkspace {
    fn new(n: usize) -> Self {
        let m = n - 1;
        Self {
            others: vec![0; m],
            a: Array2::zeros((m, m)),
            b: vec![0.0; m],
            u: vec![0.0; m],
            au: vec![0.0; m],
        }
    }

    fn select(&mut self, n: usize, j: usize) {
        for (k, o) in (0..n).filter(|&o| o != j).enumerate() {
            self.others[k] = o;
        }
    }

    fn refresh_au(&mut self) {
        let m = self.u.len();
        for p in 0..m {
            self.au[p] = (0..m).map(|q| self.a[[p, q]] * self.u[q]).sum();
        }
    }
}

/// One pass of per-column lasso problems on the working covariance `w`:
/// `beta_j = argmin 1/2 b^T W_11 b - s_12^T b + lambda |b|_1`, then
/// `w_12 = W_11 beta_j`. The diagonal of `w` stays equal to that of `s`.
fn covariance_sweep(
    s: &Array2<f64>,
    lambda: f64,
    w: &mut Array2<f64>,
    betas: &mut Array2<f64>,
    ws: &mut ColumnWorkspace,
) {
    let n = s.nrows();
    for j in 0..n {
        ws.select(n, j);
        for (p, &op) in ws.others.iter().enumerate() {
            ws.b[p] = -s[[op, j]];
            ws.u[p] = betas[[op, j]];
            for (q, &oq) in ws.others.iter().enumerate() {
                ws.a[[p, q]] = w[[op, oq]];
            }
        }
        ws.refresh_au();
        lasso_cd(&ws.a, &ws.b, 1.0, lambda, &mut ws.u, &mut ws.au);
        for (p, &op) in ws.others.iter().enumerate() {
            betas[[op, j]] = ws.u[p];
            w[[op, j]] = ws.au[p];
            w[[j, op]] = ws.au[p];
        }
        w[[j, j]] = s[[j, j]];
    }
}

/// Precision implied by the covariance-side state:
/// `theta_jj = 1 / (w_jj - w_12^T beta_j)`, `theta_12 = -beta_j theta_jj`,
/// symmetrized.
fn precision_from_covariance_state(w: &Array2<f64>, betas: &Array2<f64>) -> Array2<f64> {
    let n = w.nrows();
    let mut theta = Array2::<f64>::zeros((n, n));
    for j in 0..n {
        let fitted: f64 = (0..n)
            .filter(|&i| i != j)
            .map(|i| w[[i, j]] * betas[[i, j]])
            .sum();
        let diag = 1.0 / (w[[j, j]] - fitted);
        theta[[j, j]] = diag;
        for i in (0..n).filter(|&i| i != j) {
            theta[[i, j]] = -betas[[i, j]] * diag;
        }
    }
    let sym = (&theta + &theta.t()) * 0.5;
    sym
}

/// Exact block ascent on theta, one column at a time. For column `j` with
/// `A = (theta without row/col j)^{-1}`, the new off-diagonal part solves
/// `min_u s_jj u^T A u + 2 s_12^T u + 2 lambda |u|_1` and the diagonal becomes
/// `1/s_jj + u^T A u`. Each step maximizes the objective over its block, so
/// the objective cannot decrease and theta stays positive definite.
fn precision_sweep(
    s: &Array2<f64>,
    lambda: f64,
    theta: &mut Array2<f64>,
    ws: &mut ColumnWorkspace,
) -> Result<()> {
    let n = s.nrows();
    let mut w = linalg::spd_inverse(theta).ok_or_else(|| {
        Error::Numerical("graphical lasso iterate lost positive definiteness".into())
    })?;
    for j in 0..n {
        ws.select(n, j);
        let w22 = w[[j, j]];
        let s22 = s[[j, j]];
        for (p, &op) in ws.others.iter().enumerate() {
            ws.b[p] = s[[op, j]];
            ws.u[p] = theta[[op, j]];
            for (q, &oq) in ws.others.iter().enumerate() {
                ws.a[[p, q]] = w[[op, oq]] - w[[op, j]] * w[[oq, j]] / w22;
            }
        }
        ws.refresh_au();
        lasso_cd(&ws.a, &ws.b, s22, lambda, &mut ws.u, &mut ws.au);

        let quad: f64 = ws.u.iter().zip(&ws.au).map(|(x, y)| x * y).sum();
        theta[[j, j]] = 1.0 / s22 + quad;
        for (p, &op) in ws.others.iter().enumerate() {
            theta[[op, j]] = ws.u[p];
            theta[[j, op]] = ws.u[p];
        }
        // Block inverse of the updated theta.
        w[[j, j]] = s22;
        for (p, &op) in ws.others.iter().enumerate() {
            w[[op, j]] = -s22 * ws.au[p];
            w[[j, op]] = -s22 * ws.au[p];
            for (q, &oq) in ws.others.iter().enumerate() {
                w[[op, oq]] = ws.a[[p, q]] + s22 * ws.au[p] * ws.au[q];
            }
        }
    }
    Ok(())
}

/// Cyclic coordinate descent for `min_u c u^T A u + 2 b^T u + 2 lambda |u|_1`
/// with `c > 0`. `au` must hold `A u` on entry and is kept in sync.
fn lasso_cd(a: &Array2<f64>, b: &[f64], c: f64, lambda: f64, u: &mut [f64], au: &mut [f64]) {
    const MAX_PASSES: usize = 10_000;
    let m = u.len();
    let scale = b
        .iter()
        .map(|v| v.abs())
        .fold(0.0, f64::max)
        .max(f64::MIN_POSITIVE);
    for _ in 0..MAX_PASSES {
        let mut max_step: f64 = 0.0;
        for k in 0..m {
            let akk = a[[k, k]];
            let rest = au[k] - akk * u[k];
            let r = b[k] + c * rest;
            let new = -soft_threshold(r, lambda) / (c * akk);
            let delta = new - u[k];
            if delta != 0.0 {
                for p in 0..m {
                    au[p] += a[[p, k]] * delta;
                }
                u[k] = new;
                max_step = max_step.max((delta * c * akk).abs());
            }
        }
        if max_step <= 1e-13 * scale {
            break;
        }
    }
}

/// Negated precision with zero diagonal, min-max normalized.
pub fn precision_to_scores(precision: &PrecisionEstimate, method_tag: &str) -> Result<ScoreMatrix> {
    if precision.theta.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("precision has non-finite entries".into()));
    }
    ScoreMatrix::from_raw_min_max(precision.theta.mapv(|v| -v), method_tag)
}
