//! Soft-margin RBF support vector classifier trained by sequential minimal
//! optimization with second-order working-set selection and per-class box
//! constraints.

use std::rc::Rc;

use ndarray::{Array1, Array2, ArrayView1, Axis};

use crate::error::{Error, Result};

pub const DEFAULT_C: f64 = 1.0;
pub const DEFAULT_TOL: f64 = 1e-3;
const TAU: f64 = 1e-12;
const CACHE_BYTES: usize = 64 << 20;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum ClassWeight {
    /// `n / (2 n_class)` for each class.
    #[default]
    Balanced,
    Uniform,
    Explicit {
        positive: f64,
        negative: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum Gamma {
    /// `1 / (d * var)` with `var` the variance of all standardized features.
    #[default]
    Scale,
    Value(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SvmConfig {
    pub c: f64,
    pub gamma: Gamma,
    pub class_weight: ClassWeight,
    pub tol: f64,
    /// Defaults to `max(1e6, 100 n)` when `None`.
    pub max_iterations: Option<usize>,
}

impl Default for SvmConfig {
    fn default() -> Self {
        Self {
            c: DEFAULT_C,
            gamma: Gamma::Scale,
            class_weight: ClassWeight::Balanced,
            tol: DEFAULT_TOL,
            max_iterations: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SvmModel {
    /// Standardized support vectors, one per row.
    pub support_vectors: Array2<f64>,
    /// `alpha_i * y_i` for each support vector.
    pub dual_coefficients: Vec<f64>,
    pub bias: f64,
    pub kernel_gamma: f64,
    pub penalty_c: f64,
    /// Box-constraint multipliers `(positive, negative)`.
    pub class_weights: (f64, f64),
    pub feature_mean: Array1<f64>,
    pub feature_scale: Array1<f64>,
    pub iterations: usize,
    pub converged: bool,
}

impl SvmModel {
    pub fn feature_dim(&self) -> usize {
        self.feature_mean.len()
    }

    /// Upper bound on `alpha` for a sample of the given label.
    pub fn box_bound(&self, label: f64) -> f64 {
        if label > 0.0 {
            self.penalty_c * self.class_weights.0
        } else {
            self.penalty_c * self.class_weights.1
        }
    }
}

fn rbf(a: ArrayView1<f64>, b: ArrayView1<f64>, gamma: f64) -> f64 {
    let d2: f64 = a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum();
    (-gamma * d2).exp()
}

/// Kernel rows computed on demand, least recently used rows evicted first.
struct KernelCache<'a> {
    x: &'a Array2<f64>,
    gamma: f64,
    rows: Vec<Option<Rc<[f64]>>>,
    last_use: Vec<u64>,
    cached: usize,
    capacity: usize,
    clock: u64,
}

impl<'a> KernelCache<'a> {
    fn new(x: &'a Array2<f64>, gamma: f64) -> Self {
        let n = x.nrows();
        Self {
            x,
            gamma,
            rows: vec![None; n],
            last_use: vec![0; n],
            cached: 0,
            capacity: (CACHE_BYTES / (8 * n.max(1))).max(2),
            clock: 0,
        }
    }

    fn row(&mut self, i: usize) -> Rc<[f64]> {
        self.clock += 1;
        self.last_use[i] = self.clock;
        if let Some(r) = &self.rows[i] {
            return Rc::clone(r);
        }
        if self.cached >= self.capacity {
            let victim = (0..self.rows.len())
                .filter(|&k| self.rows[k].is_some())
                .min_by_key(|&k| self.last_use[k])
                .expect("cache is nonempty");
            self.rows[victim] = None;
            self.cached -= 1;
        }
        let xi = self.x.row(i);
        let r: Rc<[f64]> = self
            .x
            .outer_iter()
            .map(|xt| rbf(xi, xt, self.gamma))
            .collect();
        self.rows[i] = Some(Rc::clone(&r));
        self.cached += 1;
        r
    }
}

struct Solution {
    alpha: Vec<f64>,
    rho: f64,
    iterations: usize,
    converged: bool,
}

/// Minimizes `1/2 a'Qa - e'a` subject to `y'a = 0`, `0 <= a_i <= bound_i`,
/// with `Q_ij = y_i y_j K_ij`.
fn smo(
    cache: &mut KernelCache,
    y: &[f64],
    bound: &[f64],
    tol: f64,
    max_iterations: usize,
) -> Solution {
    let n = y.len();
    let mut alpha = vec![0.0; n];
    let mut grad = vec![-1.0; n];
    let at_upper = |a: f64, c: f64| a >= c;
    let at_lower = |a: f64| a <= 0.0;
    let mut iterations = 0;
    let mut converged = false;

    while iterations < max_iterations {
        let mut gmax = f64::NEG_INFINITY;
        let mut i = usize::MAX;
        for t in 0..n {
            if y[t] > 0.0 {
                if !at_upper(alpha[t], bound[t]) && -grad[t] >= gmax {
                    gmax = -grad[t];
                    i = t;
                }
            } else if !at_lower(alpha[t]) && grad[t] >= gmax {
                gmax = grad[t];
                i = t;
            }
        }
        if i == usize::MAX {
            converged = true;
            break;
        }
        let ki = cache.row(i);
        let mut gmax2 = f64::NEG_INFINITY;
        let mut j = usize::MAX;
        let mut best = f64::INFINITY;
        for t in 0..n {
            let qit = y[i] * y[t] * ki[t];
            if y[t] > 0.0 {
                if !at_lower(alpha[t]) {
                    let diff = gmax + grad[t];
                    gmax2 = gmax2.max(grad[t]);
                    if diff > 0.0 {
                        let quad = 1.0 + 1.0 - 2.0 * y[i] * qit;
                        let obj = -diff * diff / if quad > 0.0 { quad } else { TAU };
                        if obj <= best {
                            best = obj;
                            j = t;
                        }
                    }
                }
            } else if !at_upper(alpha[t], bound[t]) {
                let diff = gmax - grad[t];
                gmax2 = gmax2.max(-grad[t]);
                if diff > 0.0 {
                    let quad = 1.0 + 1.0 + 2.0 * y[i] * qit;
                    let obj = -diff * diff / if quad > 0.0 { quad } else { TAU };
                    if obj <= best {
                        best = obj;
                        j = t;
                    }
                }
            }
        }
        if gmax + gmax2 < tol || j == usize::MAX {
            converged = true;
            break;
        }
        iterations += 1;

        let kj = cache.row(j);
        let (ci, cj) = (bound[i], bound[j]);
        let (old_i, old_j) = (alpha[i], alpha[j]);
        let qij = y[i] * y[j] * ki[j];
        let (mut ai, mut aj) = (old_i, old_j);
        if y[i] != y[j] {
            let quad = (2.0 + 2.0 * qij).max(TAU);
            let delta = (-grad[i] - grad[j]) / quad;
            let diff = ai - aj;
            ai += delta;
            aj += delta;
            if diff > 0.0 {
                if aj < 0.0 {
                    aj = 0.0;
                    ai = diff;
                }
            } else if ai < 0.0 {
                ai = 0.0;
                aj = -diff;
            }
            if diff > ci - cj {
                if ai > ci {
                    ai = ci;
                    aj = ci - diff;
                }
            } else if aj > cj {
                aj = cj;
                ai = cj + diff;
            }
        } else {
            let quad = (2.0 - 2.0 * qij).max(TAU);
            let delta = (grad[i] - grad[j]) / quad;
            let sum = ai + aj;
            ai -= delta;
            aj += delta;
            if sum > ci {
                if ai > ci {
                    ai = ci;
                    aj = sum - ci;
                }
            } else if aj < 0.0 {
                aj = 0.0;
                ai = sum;
            }
            if sum > cj {
                if aj > cj {
                    aj = cj;
                    ai = sum - cj;
                }
            } else if ai < 0.0 {
                ai = 0.0;
                aj = sum;
            }
        }
        alpha[i] = ai;
        alpha[j] = aj;
        let (di, dj) = (ai - old_i, aj - old_j);
        for t in 0..n {
            grad[t] += y[t] * (y[i] * ki[t] * di + y[j] * kj[t] * dj);
        }
    }

    let mut ub = f64::INFINITY;
    let mut lb = f64::NEG_INFINITY;
    let mut free = 0usize;
    let mut free_sum = 0.0;
    for t in 0..n {
        let yg = y[t] * grad[t];
        if at_upper(alpha[t], bound[t]) {
            if y[t] < 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else if at_lower(alpha[t]) {
            if y[t] > 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else {
            free += 1;
            free_sum += yg;
        }
    }
    let rho = if free > 0 {
        free_sum / free as f64
    } else {
        (ub + lb) / 2.0
    };
    Solution {
        alpha,
        rho,
        iterations,
        converged,
    }
}

fn standardize(x: &Array2<f64>, mean: &Array1<f64>, scale: &Array1<f64>) -> Array2<f64> {
    (x - &mean.view().insert_axis(Axis(0))) / scale.view().insert_axis(Axis(0))
}

/// Trains on `features` (one sample per row) with labels `+1` / `-1`.
pub fn svm_train(features: &Array2<f64>, labels: &[f64], config: &SvmConfig) -> Result<SvmModel> {
    let (n, d) = features.dim();
    if labels.len() != n {
        return Err(Error::invalid(format!(
            "{} labels for {n} samples",
            labels.len()
        )));
    }
    if d == 0 {
        return Err(Error::invalid("features must have at least one column"));
    }
    if labels.iter().any(|&l| l != 1.0 && l != -1.0) {
        return Err(Error::invalid("labels must be +1 or -1"));
    }
    if features.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("non-finite feature value"));
    }
    if !(config.c.is_finite() && config.c > 0.0) {
        return Err(Error::invalid("penalty C must be positive"));
    }
    let positives = labels.iter().filter(|&&l| l > 0.0).count();
    let negatives = n - positives;
    if positives == 0 || negatives == 0 {
        return Err(Error::invalid("training data must contain both classes"));
    }
    let class_weights = match config.class_weight {
        ClassWeight::Balanced => (
            n as f64 / (2.0 * positives as f64),
            n as f64 / (2.0 * negatives as f64),
        ),
        ClassWeight::Uniform => (1.0, 1.0),
        ClassWeight::Explicit { positive, negative } => {
            if !(positive > 0.0 && negative > 0.0) {
                return Err(Error::invalid("class weights must be positive"));
            }
            (positive, negative)
        }
    };

    let mean = features.mean_axis(Axis(0)).expect("n > 0");
    let scale =
        features
            .std_axis(Axis(0), 0.0)
            .mapv(|s| if s > 0.0 && s.is_finite() { s } else { 1.0 });
    let x = standardize(features, &mean, &scale);
    let gamma = match config.gamma {
        Gamma::Scale => {
            let var = x.var(0.0);
            if var > 0.0 {
                1.0 / (d as f64 * var)
            } else {
                1.0
            }
        }
        Gamma::Value(g) => {
            if !(g.is_finite() && g > 0.0) {
                return Err(Error::invalid("gamma must be positive"));
            }
            g
        }
    };
    let bound: Vec<f64> = labels
        .iter()
        .map(|&l| {
            config.c
                * if l > 0.0 {
                    class_weights.0
                } else {
                    class_weights.1
                }
        })
        .collect();
    let max_iterations = config.max_iterations.unwrap_or((100 * n).max(1_000_000));
    let mut cache = KernelCache::new(&x, gamma);
    let sol = smo(&mut cache, labels, &bound, config.tol, max_iterations);

    let support: Vec<usize> = (0..n).filter(|&t| sol.alpha[t] > 0.0).collect();
    let support_vectors = x.select(Axis(0), &support);
    let dual_coefficients = support.iter().map(|&t| sol.alpha[t] * labels[t]).collect();
    Ok(SvmModel {
        support_vectors,
        dual_coefficients,
        bias: -sol.rho,
        kernel_gamma: gamma,
        penalty_c: config.c,
        class_weights,
        feature_mean: mean,
        feature_scale: scale,
        iterations: sol.iterations,
        converged: sol.converged,
    })
}

/// Decision values `sum_i coef_i K(sv_i, x) + b`, one per input row.
pub fn svm_predict(model: &SvmModel, features: &Array2<f64>) -> Result<Vec<f64>> {
    if features.ncols() != model.feature_dim() {
        return Err(Error::invalid(format!(
            "model expects {} features, got {}",
            model.feature_dim(),
            features.ncols()
        )));
    }
    let x = standardize(features, &model.feature_mean, &model.feature_scale);
    Ok(x.outer_iter()
        .map(|row| {
            model
                .support_vectors
                .outer_iter()
                .zip(&model.dual_coefficients)
                .map(|(sv, c)| c * rbf(sv, row, model.kernel_gamma))
                .sum::<f64>()
                + model.bias
        })
        .collect())
}
