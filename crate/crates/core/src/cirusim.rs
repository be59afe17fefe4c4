//! Influence-cascade features for directed neuron pairs, classified by a
//! class-weighted RBF support vector machine.
//!
//! For every spike of a source neuron the earliest following spike of each
//! other neuron is a candidate response. Candidates that fall within the
//! refractory window of an earlier source spike are dropped. The remaining
//! delays are mapped to `e^(1/x) - 1` and summarized per pair by count, mean,
//! variance and 95th percentile.

pub mod svm;

use ndarray::Array2;
use rayon::prelude::*;

use crate::dataset::{GroundTruthNetwork, ScoreMatrix};
use crate::error::{Error, Result};
use crate::preprocess::SpikeRaster;

pub use svm::{svm_predict, svm_train, ClassWeight, Gamma, SvmConfig, SvmModel};

pub const DEFAULT_REFRACTORY_S: f64 = 1.0;
pub const DEFAULT_CLAMP_FLOOR_S: f64 = 0.1;
pub const FEATURE_COUNT: usize = 4;

/// Which earlier spikes open a refractory window for a source spike.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RefractoryScope {
    /// Earlier spikes of the source neuron.
    #[default]
    SourceNeuron,
    /// Earlier spikes of any neuron.
    AnyNeuron,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpanSeries {
    pub source: usize,
    pub target: usize,
    pub spans_s: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PairFeatureVector {
    pub impulse_count: usize,
    pub mean_score: f64,
    pub var_score: f64,
    pub p95_score: f64,
}

impl PairFeatureVector {
    pub fn to_array(self) -> [f64; FEATURE_COUNT] {
        [
            self.impulse_count as f64,
            self.mean_score,
            self.var_score,
            self.p95_score,
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CirusimConfig {
    pub refractory_s: f64,
    pub clamp_floor_s: f64,
    pub scope: RefractoryScope,
    pub svm: SvmConfig,
}

impl Default for CirusimConfig {
    fn default() -> Self {
        Self {
            refractory_s: DEFAULT_REFRACTORY_S,
            clamp_floor_s: DEFAULT_CLAMP_FLOOR_S,
            scope: RefractoryScope::SourceNeuron,
            svm: SvmConfig::default(),
        }
    }
}

/// Latest time in `sorted` strictly before `t`.
fn latest_before(sorted: &[f64], t: f64) -> Option<f64> {
    let k = sorted.partition_point(|&s| s < t);
    (k > 0).then(|| sorted[k - 1])
}

/// Earliest time in `sorted` strictly after `t`.
fn earliest_after(sorted: &[f64], t: f64) -> Option<f64> {
    let k = sorted.partition_point(|&s| s <= t);
    sorted.get(k).copied()
}

/// Span series for every ordered pair `(i, j)`, `i != j`, in row-major order.
pub fn extract_span_series(
    raster: &SpikeRaster,
    refractory_s: f64,
    scope: RefractoryScope,
) -> Vec<SpanSeries> {
    let times = raster.spike_times();
    let k = times.len();
    let all: Vec<f64> = match scope {
        RefractoryScope::SourceNeuron => Vec::new(),
        RefractoryScope::AnyNeuron => {
            let mut v: Vec<f64> = times.iter().flatten().copied().collect();
            v.sort_by(f64::total_cmp);
            v
        }
    };
    (0..k)
        .into_par_iter()
        .flat_map_iter(|i| {
            let preceding: Vec<Option<f64>> = times[i]
                .iter()
                .map(|&t| match scope {
                    RefractoryScope::SourceNeuron => latest_before(&times[i], t),
                    RefractoryScope::AnyNeuron => latest_before(&all, t),
                })
                .collect();
            let all_times = times;
            (0..k).filter(move |&j| j != i).map(move |j| {
                let spans_s = all_times[i]
                    .iter()
                    .zip(&preceding)
                    .filter_map(|(&t, &prev)| {
                        let c = earliest_after(&all_times[j], t)?;
                        match prev {
                            Some(p) if c - p < refractory_s => None,
                            _ => Some(c - t),
                        }
                    })
                    .collect();
                SpanSeries {
                    source: i,
                    target: j,
                    spans_s,
                }
            })
        })
        .collect()
}

/// `e^(1/x) - 1` with `x` clamped below at `clamp_floor_s`.
pub fn span_score(span_s: f64, clamp_floor_s: f64) -> f64 {
    (1.0 / span_s.max(clamp_floor_s)).exp() - 1.0
}

/// Nearest-rank percentile of sorted values, `q` in (0, 1].
fn nearest_rank(sorted: &[f64], q: f64) -> f64 {
    let rank = (q * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

pub fn featurize_scores(scores: &[f64]) -> PairFeatureVector {
    if scores.is_empty() {
        return PairFeatureVector::default();
    }
    let n = scores.len() as f64;
    let mean = scores.iter().sum::<f64>() / n;
    let var = scores.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>() / n;
    let mut sorted = scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    PairFeatureVector {
        impulse_count: scores.len(),
        mean_score: mean,
        var_score: var,
        p95_score: nearest_rank(&sorted, 0.95),
    }
}

pub fn transform_and_featurize(series: &SpanSeries, clamp_floor_s: f64) -> PairFeatureVector {
    let scores: Vec<f64> = series
        .spans_s
        .iter()
        .map(|&x| span_score(x, clamp_floor_s))
        .collect();
    featurize_scores(&scores)
}

/// Feature rows for all ordered pairs of one raster.
#[derive(Debug, Clone)]
pub struct PairFeatures {
    pub pairs: Vec<(usize, usize)>,
    pub rows: Array2<f64>,
}

pub fn pair_features(raster: &SpikeRaster, config: &CirusimConfig) -> PairFeatures {
    let series = extract_span_series(raster, config.refractory_s, config.scope);
    let mut rows = Array2::zeros((series.len(), FEATURE_COUNT));
    let mut pairs = Vec::with_capacity(series.len());
    for (r, s) in series.iter().enumerate() {
        let f = transform_and_featurize(s, config.clamp_floor_s).to_array();
        rows.row_mut(r).assign(&ndarray::aview1(&f));
        pairs.push((s.source, s.target));
    }
    PairFeatures { pairs, rows }
}

/// Trains on the labelled networks and scores every ordered pair of `test`.
pub fn cirusim_scores(
    training: &[(&SpikeRaster, &GroundTruthNetwork)],
    test: &SpikeRaster,
    config: &CirusimConfig,
) -> Result<ScoreMatrix> {
    if training.is_empty() {
        return Err(Error::invalid("at least one training network is required"));
    }
    let mut blocks = Vec::with_capacity(training.len());
    let mut labels = Vec::new();
    for (raster, truth) in training {
        if raster.neuron_count() != truth.neuron_count() {
            return Err(Error::Inconsistent(format!(
                "raster has {} neurons, ground truth {}",
                raster.neuron_count(),
                truth.neuron_count()
            )));
        }
        let f = pair_features(raster, config);
        labels.extend(
            f.pairs
                .iter()
                .map(|&(i, j)| if truth.has_edge(i, j) { 1.0 } else { -1.0 }),
        );
        blocks.push(f.rows);
    }
    let views: Vec<_> = blocks.iter().map(|b| b.view()).collect();
    let x = ndarray::concatenate(ndarray::Axis(0), &views)
        .map_err(|e| Error::invalid(e.to_string()))?;
    let model = svm_train(&x, &labels, &config.svm)?;

    let target = pair_features(test, config);
    let decisions = svm_predict(&model, &target.rows)?;
    let k = test.neuron_count();
    let mut raw = Array2::zeros((k, k));
    for (&(i, j), d) in target.pairs.iter().zip(decisions) {
        raw[[i, j]] = d;
    }
    ScoreMatrix::from_raw_min_max(raw, "cirusim")
}
