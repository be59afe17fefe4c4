//! Shared preprocessing and the registry of connectivity scorers.

use std::fmt;
use std::str::FromStr;

use crate::cirusim::{self, CirusimConfig};
use crate::dataset::{Dataset, FluorescencePanel, GroundTruthNetwork, ScoreMatrix};
use crate::error::{Error, Result};
use crate::eval::{ConnectivityMethod, LabeledNetwork};
use crate::hawkes::{self, EmConfig};
use crate::model_free::{self, GlassoConfig};
use crate::preprocess::{self, ScatterConfig, SpikeRaster};

pub const DEFAULT_SMOOTHING_LENGTH: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrepareConfig {
    /// `None` skips scatter correction.
    pub scatter: Option<ScatterConfig>,
    pub spike_threshold: f64,
    pub high_activity_fraction: f64,
}

impl Default for PrepareConfig {
    fn default() -> Self {
        Self {
            scatter: Some(ScatterConfig::default()),
            spike_threshold: preprocess::DEFAULT_SPIKE_THRESHOLD,
            high_activity_fraction: preprocess::DEFAULT_HIGH_ACTIVITY_FRACTION,
        }
    }
}

/// One network after scatter correction and discretization.
#[derive(Debug, Clone)]
pub struct PreparedNetwork {
    pub id: String,
    pub fluorescence: FluorescencePanel,
    pub raster: SpikeRaster,
    /// `raster` with high-activity frames zeroed.
    pub filtered: SpikeRaster,
    pub truth: Option<GroundTruthNetwork>,
}

impl LabeledNetwork for PreparedNetwork {
    fn id(&self) -> &str {
        &self.id
    }

    fn truth(&self) -> Option<&GroundTruthNetwork> {
        self.truth.as_ref()
    }
}

pub fn prepare(
    id: impl Into<String>,
    dataset: &Dataset,
    config: &PrepareConfig,
) -> Result<PreparedNetwork> {
    let fluorescence = match &config.scatter {
        Some(sc) => {
            let d = preprocess::build_scatter_matrix(&dataset.layout, sc)?;
            preprocess::correct_scatter(&dataset.panel, &d)?
        }
        None => dataset.panel.clone(),
    };
    let raster = preprocess::discretize(&fluorescence, config.spike_threshold);
    let filtered = preprocess::remove_high_activity_frames(&raster, config.high_activity_fraction)?;
    Ok(PreparedNetwork {
        id: id.into(),
        fluorescence,
        raster,
        filtered,
        truth: dataset.truth.clone(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MethodKind {
    Xcorr,
    Pca,
    Glasso,
    Hawkes,
    Cirusim,
}

impl MethodKind {
    pub const ALL: [MethodKind; 5] = [
        Self::Xcorr,
        Self::Pca,
        Self::Glasso,
        Self::Hawkes,
        Self::Cirusim,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::Xcorr => "xcorr",
            Self::Pca => "pca",
            Self::Glasso => "glasso",
            Self::Hawkes => "hawkes",
            Self::Cirusim => "cirusim",
        }
    }

    pub fn is_supervised(self) -> bool {
        self == Self::Cirusim
    }
}

impl fmt::Display for MethodKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MethodKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| {
                let valid: Vec<&str> = Self::ALL.iter().map(|m| m.name()).collect();
                Error::invalid(format!(
                    "unknown method '{s}' (valid: {})",
                    valid.join(", ")
                ))
            })
    }
}

/// Series fed to the covariance-based methods.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PrecisionInput {
    /// Discretized raster smoothed by a trailing summation filter.
    #[default]
    SmoothedRaster,
    Fluorescence,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MethodParams {
    pub lags: Vec<usize>,
    pub variance_kept: f64,
    /// Glasso penalty as a fraction of the largest off-diagonal covariance.
    pub lambda_factor: f64,
    pub max_sweeps: usize,
    pub glasso_tol: f64,
    pub precision_input: PrecisionInput,
    pub smoothing_length: usize,
    pub em: EmConfig,
    pub cirusim: CirusimConfig,
}

impl Default for MethodParams {
    fn default() -> Self {
        Self {
            lags: vec![1],
            variance_kept: model_free::DEFAULT_VARIANCE_KEPT,
            lambda_factor: model_free::DEFAULT_LAMBDA_FACTOR,
            max_sweeps: model_free::DEFAULT_MAX_SWEEPS,
            glasso_tol: model_free::DEFAULT_GLASSO_TOL,
            precision_input: PrecisionInput::SmoothedRaster,
            smoothing_length: DEFAULT_SMOOTHING_LENGTH,
            em: EmConfig::default(),
            cirusim: CirusimConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Method {
    pub kind: MethodKind,
    pub params: MethodParams,
}

impl Method {
    pub fn new(kind: MethodKind) -> Self {
        Self {
            kind,
            params: MethodParams::default(),
        }
    }

    pub fn with_params(kind: MethodKind, params: MethodParams) -> Self {
        Self { kind, params }
    }

    fn covariance(&self, net: &PreparedNetwork) -> Result<model_free::CovarianceEstimate> {
        let data = match self.params.precision_input {
            PrecisionInput::SmoothedRaster => {
                model_free::summation_filter(&net.raster.to_f64(), self.params.smoothing_length)
            }
            PrecisionInput::Fluorescence => net.fluorescence.values().clone(),
        };
        model_free::empirical_covariance(&data)
    }

    /// Scores `test`; `training` is used only by supervised methods.
    pub fn score_network(
        &self,
        training: &[&PreparedNetwork],
        test: &PreparedNetwork,
    ) -> Result<ScoreMatrix> {
        let p = &self.params;
        match self.kind {
            MethodKind::Xcorr => model_free::cross_correlation_scores(&test.raster, &p.lags),
            MethodKind::Pca => {
                let cov = self.covariance(test)?;
                model_free::precision_to_scores(
                    &model_free::pca_precision(&cov, p.variance_kept)?,
                    "pca",
                )
            }
            MethodKind::Glasso => {
                let cov = self.covariance(test)?;
                let config = GlassoConfig {
                    lambda: model_free::relative_lambda(&cov, p.lambda_factor),
                    max_sweeps: p.max_sweeps,
                    tol: p.glasso_tol,
                };
                let fit = model_free::graphical_lasso(&cov, &config)?;
                model_free::precision_to_scores(&fit.precision, "glasso")
            }
            MethodKind::Hawkes => {
                if test.raster.total_spikes() == 0 {
                    return Err(Error::invalid(format!("network {} has no spikes", test.id)));
                }
                let fit = hawkes::em_fit(&test.raster, &p.em)?;
                hawkes::hawkes_scores(&fit.model)
            }
            MethodKind::Cirusim => {
                let mut labelled = Vec::with_capacity(training.len());
                for net in training {
                    let truth = net.truth.as_ref().ok_or_else(|| {
                        Error::Inconsistent(format!(
                            "training network {} has no ground truth",
                            net.id
                        ))
                    })?;
                    labelled.push((&net.filtered, truth));
                }
                cirusim::cirusim_scores(&labelled, &test.filtered, &p.cirusim)
            }
        }
    }
}

impl ConnectivityMethod<PreparedNetwork> for Method {
    fn tag(&self) -> String {
        self.kind.name().to_string()
    }

    fn is_supervised(&self) -> bool {
        self.kind.is_supervised()
    }

    fn score(&self, training: &[&PreparedNetwork], test: &PreparedNetwork) -> Result<ScoreMatrix> {
        self.score_network(training, test)
    }
}
