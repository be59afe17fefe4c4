//! Multivariate Hawkes process with constant background rates and
//! exponential excitation kernels.
//!
//! The intensity of neuron `k` is
//!
//! ```text
//! lambda_k(t) = mu_k + sum_{spikes n' before t} A[c', k] W[c', k] g(t - t_n')
//! g(dt) = theta * exp(-theta * dt)
//! ```
//!
//! where `c'` is the neuron that emitted spike `n'`. `W[c', k]` is the
//! expected number of `k` spikes triggered by one spike of `c'`, since `g`
//! integrates to one. Fitting is by expectation-maximization over the latent
//! parent of every spike (the background process or one earlier spike).

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::dataset::ScoreMatrix;
use crate::error::{Error, Result};
use crate::linalg;
use crate::preprocess::SpikeRaster;

pub const DEFAULT_EM_ITERATIONS: usize = 100;
/// 100 ms decay.
pub const DEFAULT_THETA_INIT: f64 = 10.0;
/// Parents are searched within `WINDOW_DECAYS / theta` seconds.
pub const WINDOW_DECAYS: f64 = 10.0;
pub const MU_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct HawkesModel {
    pub mu: Vec<f64>,
    pub weights: Array2<f64>,
    pub adjacency: Array2<u8>,
    pub theta: f64,
}

impl HawkesModel {
    /// Model with the adjacency taken as the support of `weights`.
    pub fn new(mu: Vec<f64>, weights: Array2<f64>, theta: f64) -> Result<Self> {
        let adjacency = weights.mapv(|w| u8::from(w > 0.0));
        Self::with_adjacency(mu, weights, adjacency, theta)
    }

    pub fn with_adjacency(
        mu: Vec<f64>,
        weights: Array2<f64>,
        adjacency: Array2<u8>,
        theta: f64,
    ) -> Result<Self> {
        let k = mu.len();
        if weights.dim() != (k, k) || adjacency.dim() != (k, k) {
            return Err(Error::invalid(format!(
                "weights and adjacency must be {k}x{k}"
            )));
        }
        if mu.iter().any(|m| !(m.is_finite() && *m >= 0.0)) {
            return Err(Error::invalid(
                "background rates must be finite and nonnegative",
            ));
        }
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::invalid("weights must be finite and nonnegative"));
        }
        if adjacency.iter().any(|&a| a > 1) {
            return Err(Error::invalid("adjacency must be binary"));
        }
        if !(theta.is_finite() && theta > 0.0) {
            return Err(Error::invalid(format!(
                "kernel decay must be positive, got {theta}"
            )));
        }
        Ok(Self {
            mu,
            weights,
            adjacency,
            theta,
        })
    }

    pub fn neuron_count(&self) -> usize {
        self.mu.len()
    }

    /// `A ⊙ W`
    pub fn effective_weights(&self) -> Array2<f64> {
        &self.weights * &self.adjacency.mapv(f64::from)
    }

    pub fn kernel(&self, dt: f64) -> f64 {
        self.theta * (-self.theta * dt).exp()
    }

    /// Spectral radius of the effective weights; below one means subcritical.
    pub fn spectral_radius(&self) -> f64 {
        linalg::spectral_radius(&self.effective_weights())
    }
}

/// Spikes of all neurons merged into one time-ordered sequence.
#[derive(Debug, Clone)]
pub struct SpikeEvents {
    pub times: Vec<f64>,
    pub neurons: Vec<usize>,
    pub counts: Vec<usize>,
    pub duration_s: f64,
}

impl SpikeEvents {
    pub fn from_raster(raster: &SpikeRaster) -> Self {
        let mut pairs: Vec<(f64, usize)> = raster
            .spike_times()
            .iter()
            .enumerate()
            .flat_map(|(k, ts)| ts.iter().map(move |&t| (t, k)))
            .collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        Self {
            times: pairs.iter().map(|p| p.0).collect(),
            neurons: pairs.iter().map(|p| p.1).collect(),
            counts: raster.spike_counts(),
            duration_s: raster.duration_s(),
        }
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }
}

/// Candidate parents of every spike in compressed-row form. A parent must
/// precede the child strictly and lie within `window` seconds when given.
#[derive(Debug, Clone)]
struct ParentIndex {
    offsets: Vec<usize>,
    parent: Vec<u32>,
    dt: Vec<f64>,
}

impl ParentIndex {
    fn build(events: &SpikeEvents, window: Option<f64>) -> Self {
        let mut offsets = Vec::with_capacity(events.len() + 1);
        let mut parent = Vec::new();
        let mut dt = Vec::new();
        offsets.push(0);
        for n in 0..events.len() {
            let t = events.times[n];
            for p in (0..n).rev() {
                let d = t - events.times[p];
                if window.is_some_and(|w| d > w) {
                    break;
                }
                if d > 0.0 {
                    parent.push(p as u32);
                    dt.push(d);
                }
            }
            offsets.push(parent.len());
        }
        Self {
            offsets,
            parent,
            dt,
        }
    }

    fn range(&self, n: usize) -> std::ops::Range<usize> {
        self.offsets[n]..self.offsets[n + 1]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Compensator {
    /// Every spike contributes its full expected offspring `sum_k W[c, k]`.
    #[default]
    Complete,
    /// Offspring mass truncated at the end of the recording.
    BoundaryCorrected,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LikelihoodOptions {
    pub compensator: Compensator,
    /// Only spikes this close count as parents; `None` uses all earlier spikes.
    pub window: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogLikelihood {
    pub value: f64,
    /// Set when some observed spike had zero intensity; `value` is then `-inf`.
    pub zero_intensity: bool,
}

/// Point-process log-likelihood of the raster under `model`.
pub fn log_likelihood(
    raster: &SpikeRaster,
    model: &HawkesModel,
    options: &LikelihoodOptions,
) -> Result<LogLikelihood> {
    check_dims(raster, model)?;
    let events = SpikeEvents::from_raster(raster);
    let parents = ParentIndex::build(&events, options.window);
    Ok(log_likelihood_events(
        &events,
        &parents,
        model,
        options.compensator,
    ))
}

fn check_dims(raster: &SpikeRaster, model: &HawkesModel) -> Result<()> {
    if raster.neuron_count() != model.neuron_count() {
        return Err(Error::Inconsistent(format!(
            "raster has {} neurons, model {}",
            raster.neuron_count(),
            model.neuron_count()
        )));
    }
    Ok(())
}

fn log_likelihood_events(
    events: &SpikeEvents,
    parents: &ParentIndex,
    model: &HawkesModel,
    compensator: Compensator,
) -> LogLikelihood {
    let w = model.effective_weights();
    let k = model.neuron_count();
    let big_t = events.duration_s;
    let mut value = -model.mu.iter().sum::<f64>() * big_t;
    let out_mass: Vec<f64> = (0..k).map(|i| w.row(i).sum()).collect();
    match compensator {
        Compensator::Complete => {
            value -= (0..k)
                .map(|i| out_mass[i] * events.counts[i] as f64)
                .sum::<f64>();
        }
        Compensator::BoundaryCorrected => {
            for (&t, &c) in events.times.iter().zip(&events.neurons) {
                value -= out_mass[c] * (1.0 - (-model.theta * (big_t - t).max(0.0)).exp());
            }
        }
    }
    let mut zero_intensity = false;
    for n in 0..events.len() {
        let c = events.neurons[n];
        let mut intensity = model.mu[c];
        for idx in parents.range(n) {
            let p = parents.parent[idx] as usize;
            intensity += w[[events.neurons[p], c]] * model.kernel(parents.dt[idx]);
        }
        if intensity <= 0.0 {
            zero_intensity = true;
        } else {
            value += intensity.ln();
        }
    }
    if zero_intensity {
        value = f64::NEG_INFINITY;
    }
    LogLikelihood {
        value,
        zero_intensity,
    }
}

/// Posterior over the parent of every spike: `background[n]` for the
/// background process and `(parent index, probability)` pairs for earlier
/// spikes. Indices refer to the time-ordered [`SpikeEvents`].
#[derive(Debug, Clone)]
pub struct ParentResponsibilities {
    pub background: Vec<f64>,
    pub parents: Vec<Vec<(usize, f64)>>,
}

pub fn parent_responsibilities(
    raster: &SpikeRaster,
    model: &HawkesModel,
    window: Option<f64>,
) -> Result<(SpikeEvents, ParentResponsibilities)> {
    check_dims(raster, model)?;
    let events = SpikeEvents::from_raster(raster);
    let index = ParentIndex::build(&events, window);
    let w = model.effective_weights();
    let mut background = Vec::with_capacity(events.len());
    let mut parents = Vec::with_capacity(events.len());
    for n in 0..events.len() {
        let c = events.neurons[n];
        let terms: Vec<(usize, f64)> = index
            .range(n)
            .map(|idx| {
                let p = index.parent[idx] as usize;
                (p, w[[events.neurons[p], c]] * model.kernel(index.dt[idx]))
            })
            .collect();
        let total = model.mu[c] + terms.iter().map(|t| t.1).sum::<f64>();
        if total <= 0.0 {
            return Err(Error::Numerical(format!("spike {n} has zero intensity")));
        }
        background.push(model.mu[c] / total);
        parents.push(terms.into_iter().map(|(p, v)| (p, v / total)).collect());
    }
    Ok((
        events,
        ParentResponsibilities {
            background,
            parents,
        },
    ))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmConfig {
    pub iterations: usize,
    pub theta_init: f64,
    /// Parent search window in seconds; defaults to `10 / theta_init`.
    pub window: Option<f64>,
    /// When false, `W` stays zero and only background rates are fitted.
    pub fit_weights: bool,
    /// Initial value for every weight between neurons that spiked.
    pub weight_init: f64,
}

impl Default for EmConfig {
    fn default() -> Self {
        Self {
            iterations: DEFAULT_EM_ITERATIONS,
            theta_init: DEFAULT_THETA_INIT,
            window: None,
            fit_weights: true,
            weight_init: 0.1,
        }
    }
}

impl EmConfig {
    pub fn effective_window(&self) -> f64 {
        self.window.unwrap_or(WINDOW_DECAYS / self.theta_init)
    }
}

#[derive(Debug, Clone)]
pub struct EmFit {
    pub model: HawkesModel,
    /// Log-likelihood (windowed, complete compensator) of the final model.
    pub log_likelihood: f64,
    /// Log-likelihood of the initial model and after every iteration.
    pub trace: Vec<f64>,
}

/// Sufficient statistics of one E-step.
#[derive(Debug, Clone)]
struct EStats {
    background: Vec<f64>,
    triggered: Array2<f64>,
    mass: f64,
    mass_dt: f64,
    log_intensity: f64,
    zero_intensity: bool,
}

impl EStats {
    fn zeros(k: usize) -> Self {
        Self {
            background: vec![0.0; k],
            triggered: Array2::zeros((k, k)),
            mass: 0.0,
            mass_dt: 0.0,
            log_intensity: 0.0,
            zero_intensity: false,
        }
    }

    fn merge(mut self, other: &EStats) -> Self {
        for (a, b) in self.background.iter_mut().zip(&other.background) {
            *a += b;
        }
        self.triggered += &other.triggered;
        self.mass += other.mass;
        self.mass_dt += other.mass_dt;
        self.log_intensity += other.log_intensity;
        self.zero_intensity |= other.zero_intensity;
        self
    }
}

const E_STEP_CHUNK: usize = 2048;

/// Chunks are reduced in index order, so the result does not depend on the
/// thread schedule.
fn e_step(events: &SpikeEvents, parents: &ParentIndex, model: &HawkesModel) -> EStats {
    let k = model.neuron_count();
    let w = model.effective_weights();
    let chunks: Vec<EStats> = (0..events.len().div_ceil(E_STEP_CHUNK))
        .into_par_iter()
        .map(|chunk| {
            let mut stats = EStats::zeros(k);
            let mut terms = Vec::new();
            let lo = chunk * E_STEP_CHUNK;
            let hi = (lo + E_STEP_CHUNK).min(events.len());
            for n in lo..hi {
                let c = events.neurons[n];
                terms.clear();
                let mut total = model.mu[c];
                for idx in parents.range(n) {
                    let p = events.neurons[parents.parent[idx] as usize];
                    let v = w[[p, c]] * model.kernel(parents.dt[idx]);
                    terms.push((p, v, parents.dt[idx]));
                    total += v;
                }
                if total <= 0.0 {
                    stats.zero_intensity = true;
                    continue;
                }
                stats.log_intensity += total.ln();
                stats.background[c] += model.mu[c] / total;
                for &(p, v, dt) in &terms {
                    let r = v / total;
                    stats.triggered[[p, c]] += r;
                    stats.mass += r;
                    stats.mass_dt += r * dt;
                }
            }
            stats
        })
        .collect();
    chunks.iter().fold(EStats::zeros(k), |acc, s| acc.merge(s))
}

fn windowed_log_likelihood(stats: &EStats, events: &SpikeEvents, model: &HawkesModel) -> f64 {
    if stats.zero_intensity {
        return f64::NEG_INFINITY;
    }
    let w = model.effective_weights();
    let k = model.neuron_count();
    let compensator = model.mu.iter().sum::<f64>() * events.duration_s
        + (0..k)
            .map(|i| w.row(i).sum() * events.counts[i] as f64)
            .sum::<f64>();
    stats.log_intensity - compensator
}

/// Expectation-maximization for `mu`, `W` and a shared `theta`.
///
/// E-step: each spike's parent posterior is proportional to `mu_k` for the
/// background and to `W[c', k] g(dt)` for each earlier spike inside the
/// window. M-step: `mu_k` is the background mass of `k`'s spikes over the
/// recording length (floored at [`MU_FLOOR`]), `W[c', k]` is the mass that
/// `c'` spikes pass to `k` spikes divided by the spike count of `c'`, and
/// `theta` is the triggered mass over its responsibility-weighted delays.
///
/// The window is fixed for the whole fit, so the windowed likelihood in
/// [`EmFit::trace`] is nondecreasing.
pub fn em_fit(raster: &SpikeRaster, config: &EmConfig) -> Result<EmFit> {
    if config.iterations == 0 {
        return Err(Error::invalid("EM needs at least one iteration"));
    }
    if !(config.theta_init.is_finite() && config.theta_init > 0.0) {
        return Err(Error::invalid("theta_init must be positive"));
    }
    let window = config.effective_window();
    if !(window > 0.0) {
        return Err(Error::invalid("parent window must be positive"));
    }
    let k = raster.neuron_count();
    let events = SpikeEvents::from_raster(raster);
    let parents = ParentIndex::build(&events, Some(window));
    let big_t = events.duration_s;

    let mu = events
        .counts
        .iter()
        .map(|&c| (0.5 * c as f64 / big_t).max(MU_FLOOR))
        .collect();
    let weights = Array2::from_shape_fn((k, k), |(i, j)| {
        if config.fit_weights && events.counts[i] > 0 && events.counts[j] > 0 {
            config.weight_init
        } else {
            0.0
        }
    });
    let mut model = HawkesModel {
        mu,
        adjacency: Array2::ones((k, k)),
        weights,
        theta: config.theta_init,
    };

    let mut trace = Vec::with_capacity(config.iterations + 1);
    for _ in 0..config.iterations {
        let stats = e_step(&events, &parents, &model);
        trace.push(windowed_log_likelihood(&stats, &events, &model));

        for (c, m) in model.mu.iter_mut().enumerate() {
            *m = (stats.background[c] / big_t).max(MU_FLOOR);
        }
        if config.fit_weights {
            for ((i, j), w) in model.weights.indexed_iter_mut() {
                let count = events.counts[i];
                *w = if count > 0 {
                    stats.triggered[[i, j]] / count as f64
                } else {
                    0.0
                };
            }
            if stats.mass > 0.0 && stats.mass_dt > 0.0 {
                model.theta = stats.mass / stats.mass_dt;
            }
        }
    }
    let stats = e_step(&events, &parents, &model);
    let log_likelihood = windowed_log_likelihood(&stats, &events, &model);
    trace.push(log_likelihood);
    model.adjacency = model.weights.mapv(|w| u8::from(w > 0.0));
    Ok(EmFit {
        model,
        log_likelihood,
        trace,
    })
}

/// Fitted weights with a zero diagonal, min-max normalized.
pub fn hawkes_scores(model: &HawkesModel) -> Result<ScoreMatrix> {
    ScoreMatrix::from_raw_min_max(model.effective_weights(), "hawkes")
}

/// Discrete-time forward simulation. At every frame neuron `k` fires with
/// probability `1 - exp(-lambda_k dt)`, where the excitation part of
/// `lambda_k` sums the kernel over all spikes from earlier frames. Frame 0 is
/// a silent baseline frame, matching the discretizer's convention that the
/// first frame has no predecessor.
pub fn simulate(
    model: &HawkesModel,
    duration_s: f64,
    sample_rate_hz: f64,
    seed: u64,
) -> Result<SpikeRaster> {
    if !(duration_s.is_finite() && duration_s > 0.0) {
        return Err(Error::invalid("duration must be positive"));
    }
    if !(sample_rate_hz.is_finite() && sample_rate_hz > 0.0) {
        return Err(Error::invalid("sample rate must be positive"));
    }
    let radius = model.spectral_radius();
    // Eigenvalues of a critical W can come back a few ulps below one.
    if radius >= 1.0 - 1e-10 {
        return Err(Error::invalid(format!(
            "supercritical process: spectral radius of W is {radius:.4} (must be < 1)"
        )));
    }
    let k = model.neuron_count();
    let frames = (duration_s * sample_rate_hz).round() as usize;
    let dt = 1.0 / sample_rate_hz;
    let decay = (-model.theta * dt).exp();
    let w = model.effective_weights();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut events = Array2::<u8>::zeros((frames.max(1), k));
    let mut excitation = vec![0.0; k];
    let mut fired = Vec::with_capacity(k);
    for t in 0..frames {
        fired.clear();
        for c in 0..k {
            let u: f64 = rng.random();
            if t == 0 {
                continue;
            }
            let lambda = model.mu[c] + excitation[c];
            if u < 1.0 - (-lambda * dt).exp() {
                events[[t, c]] = 1;
                fired.push(c);
            }
        }
        for (c, e) in excitation.iter_mut().enumerate() {
            let drive: f64 = fired.iter().map(|&p| w[[p, c]]).sum();
            *e = decay * (*e + model.theta * drive);
        }
    }
    SpikeRaster::from_events(events, sample_rate_hz)
}
