//! Light-scatter correction, spike discretization and the high-activity frame
//! filter.
//!
//! Scatter is modelled by a radial matrix `D` with unit diagonal and
//! off-diagonal entries `amplitude * exp(-|p_i - p_j|^2 / length_scale)`; an
//! observed frame is `y = D x`, and correction solves for `x`.

use nalgebra::DMatrix;
use ndarray::{Array2, Axis};

use crate::dataset::{FluorescencePanel, NeuronLayout};
use crate::error::{Error, Result};
use crate::linalg;

pub const DEFAULT_SCATTER_AMPLITUDE: f64 = 0.15;
pub const DEFAULT_SPIKE_THRESHOLD: f64 = 0.12;
pub const DEFAULT_HIGH_ACTIVITY_FRACTION: f64 = 0.7;
/// Condition numbers above this are treated as singular.
pub const MAX_CONDITION: f64 = 1e12;
pub const DEFAULT_RIDGE: f64 = 1e-8;

/// Sign of the exponent in the scatter kernel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ScatterKernel {
    /// `exp(-d^2 / length_scale)`: scatter fades with distance.
    #[default]
    Decaying,
    /// `exp(+d^2 / length_scale)`: the literal growing form.
    Growing,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScatterConfig {
    pub amplitude: f64,
    pub length_scale: f64,
    pub kernel: ScatterKernel,
    /// Added to the diagonal when the matrix would otherwise be singular.
    pub ridge: Option<f64>,
}

impl Default for ScatterConfig {
    fn default() -> Self {
        Self {
            amplitude: DEFAULT_SCATTER_AMPLITUDE,
            length_scale: 2.0,
            kernel: ScatterKernel::Decaying,
            ridge: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScatterMatrix {
    matrix: Array2<f64>,
    amplitude: f64,
    length_scale: f64,
    condition: f64,
}

impl ScatterMatrix {
    pub fn matrix(&self) -> &Array2<f64> {
        &self.matrix
    }

    pub fn amplitude(&self) -> f64 {
        self.amplitude
    }

    pub fn length_scale(&self) -> f64 {
        self.length_scale
    }

    pub fn condition_number(&self) -> f64 {
        self.condition
    }

    pub fn neuron_count(&self) -> usize {
        self.matrix.nrows()
    }

    /// Forward model: every frame `x` becomes `D x`.
    pub fn scatter(&self, panel: &FluorescencePanel) -> Result<FluorescencePanel> {
        self.check_dims(panel)?;
        // Rows are frames, so Y = X D^T = X D.
        let observed = panel.values().dot(&self.matrix.t());
        FluorescencePanel::new(observed, panel.sample_rate_hz())
    }

    fn check_dims(&self, panel: &FluorescencePanel) -> Result<()> {
        if panel.neuron_count() != self.neuron_count() {
            return Err(Error::Inconsistent(format!(
                "panel has {} neurons, scatter matrix {}",
                panel.neuron_count(),
                self.neuron_count()
            )));
        }
        Ok(())
    }
}

pub fn build_scatter_matrix(
    layout: &NeuronLayout,
    config: &ScatterConfig,
) -> Result<ScatterMatrix> {
    let n = layout.neuron_count();
    if n < 2 {
        return Err(Error::invalid("scatter matrix needs at least 2 neurons"));
    }
    if !(config.amplitude.is_finite() && config.amplitude >= 0.0) {
        return Err(Error::invalid(format!(
            "scatter amplitude must be >= 0, got {}",
            config.amplitude
        )));
    }
    if !(config.length_scale.is_finite() && config.length_scale > 0.0) {
        return Err(Error::invalid("scatter length scale must be positive"));
    }
    let sign = match config.kernel {
        ScatterKernel::Decaying => -1.0,
        ScatterKernel::Growing => 1.0,
    };
    let p = layout.positions();
    let mut matrix = Array2::from_shape_fn((n, n), |(i, j)| {
        if i == j {
            1.0
        } else {
            let dx = p[i][0] - p[j][0];
            let dy = p[i][1] - p[j][1];
            config.amplitude * (sign * (dx * dx + dy * dy) / config.length_scale).exp()
        }
    });
    if matrix.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("scatter kernel overflowed".into()));
    }
    let mut condition = linalg::symmetric_condition_number(&matrix);
    if condition > MAX_CONDITION {
        let Some(eps) = config.ridge else {
            return Err(Error::Numerical(format!(
                "scatter matrix is singular (condition {condition:.3e}); retry with a diagonal ridge such as {DEFAULT_RIDGE:e}"
            )));
        };
        matrix.diag_mut().mapv_inplace(|d| d + eps);
        condition = linalg::symmetric_condition_number(&matrix);
        if condition > MAX_CONDITION {
            return Err(Error::Numerical(format!(
                "scatter matrix still singular after ridge {eps:e} (condition {condition:.3e})"
            )));
        }
    }
    Ok(ScatterMatrix {
        matrix,
        amplitude: config.amplitude,
        length_scale: config.length_scale,
        condition,
    })
}

/// Replaces every frame `y` by the solution `x` of `D x = y`.
pub fn correct_scatter(
    panel: &FluorescencePanel,
    scatter: &ScatterMatrix,
) -> Result<FluorescencePanel> {
    scatter.check_dims(panel)?;
    if scatter.condition > MAX_CONDITION {
        return Err(Error::Numerical(format!(
            "scatter matrix is ill-conditioned (condition {:.3e})",
            scatter.condition
        )));
    }
    let lu = linalg::to_dmatrix(&scatter.matrix).lu();
    let (frames, n) = panel.values().dim();
    // Frames become columns of the right-hand side.
    let rhs = DMatrix::from_fn(n, frames, |i, t| panel.values()[[t, i]]);
    let solved = lu
        .solve(&rhs)
        .ok_or_else(|| Error::Numerical("scatter matrix is singular".into()))?;
    let values = Array2::from_shape_fn((frames, n), |(t, i)| solved[(i, t)]);
    FluorescencePanel::new(values, panel.sample_rate_hz())
}

/// Binary `T x N` events with per-neuron spike times in seconds.
#[derive(Debug, Clone, PartialEq)]
pub struct SpikeRaster {
    events: Array2<u8>,
    spike_times: Vec<Vec<f64>>,
    sample_rate_hz: f64,
}

impl SpikeRaster {
    pub fn from_events(events: Array2<u8>, sample_rate_hz: f64) -> Result<Self> {
        if !(sample_rate_hz.is_finite() && sample_rate_hz > 0.0) {
            return Err(Error::invalid("sample rate must be positive"));
        }
        if events.iter().any(|&e| e > 1) {
            return Err(Error::invalid("raster events must be 0 or 1"));
        }
        let spike_times = events
            .axis_iter(Axis(1))
            .map(|col| {
                col.iter()
                    .enumerate()
                    .filter(|(_, &e)| e == 1)
                    .map(|(t, _)| t as f64 / sample_rate_hz)
                    .collect()
            })
            .collect();
        Ok(Self {
            events,
            spike_times,
            sample_rate_hz,
        })
    }

    pub fn events(&self) -> &Array2<u8> {
        &self.events
    }

    pub fn spike_times(&self) -> &[Vec<f64>] {
        &self.spike_times
    }

    pub fn sample_rate_hz(&self) -> f64 {
        self.sample_rate_hz
    }

    pub fn frames(&self) -> usize {
        self.events.nrows()
    }

    pub fn neuron_count(&self) -> usize {
        self.events.ncols()
    }

    /// Length of the observation window in seconds.
    pub fn duration_s(&self) -> f64 {
        self.frames() as f64 / self.sample_rate_hz
    }

    pub fn spike_counts(&self) -> Vec<usize> {
        self.spike_times.iter().map(Vec::len).collect()
    }

    pub fn total_spikes(&self) -> usize {
        self.spike_times.iter().map(Vec::len).sum()
    }

    pub fn to_f64(&self) -> Array2<f64> {
        self.events.mapv(f64::from)
    }
}

/// Converts fluorescence into binary events.
pub trait Discretizer {
    fn discretize(&self, panel: &FluorescencePanel) -> SpikeRaster;
}

/// An event fires at frame `t` when the trace rises by more than `threshold`
/// since frame `t - 1`. Frame 0 has no predecessor and never fires.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FirstDifference {
    pub threshold: f64,
}

impl Default for FirstDifference {
    fn default() -> Self {
        Self {
            threshold: DEFAULT_SPIKE_THRESHOLD,
        }
    }
}

impl Discretizer for FirstDifference {
    fn discretize(&self, panel: &FluorescencePanel) -> SpikeRaster {
        let v = panel.values();
        let (frames, n) = v.dim();
        let mut events = Array2::<u8>::zeros((frames, n));
        for t in 1..frames {
            for i in 0..n {
                if v[[t, i]] - v[[t - 1, i]] > self.threshold {
                    events[[t, i]] = 1;
                }
            }
        }
        SpikeRaster::from_events(events, panel.sample_rate_hz()).expect("panel rate is validated")
    }
}

pub fn discretize(panel: &FluorescencePanel, threshold: f64) -> SpikeRaster {
    FirstDifference { threshold }.discretize(panel)
}

/// Zeroes every frame in which more than `fraction` of the neurons fire. The
/// time axis is kept intact.
pub fn remove_high_activity_frames(raster: &SpikeRaster, fraction: f64) -> Result<SpikeRaster> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::invalid(format!(
            "activity fraction must be in (0, 1), got {fraction}"
        )));
    }
    let n = raster.neuron_count() as f64;
    let mut events = raster.events.clone();
    for mut row in events.axis_iter_mut(Axis(0)) {
        let active = row.iter().filter(|&&e| e == 1).count() as f64;
        if active / n > fraction {
            row.fill(0);
        }
    }
    SpikeRaster::from_events(events, raster.sample_rate_hz)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn layout(points: &[[f64; 2]]) -> NeuronLayout {
        NeuronLayout::new(points.to_vec()).unwrap()
    }

    #[test]
    fn coincident_neurons_get_full_amplitude() {
        let d = build_scatter_matrix(
            &layout(&[[0.3, 0.3], [0.3, 0.3]]),
            &ScatterConfig::default(),
        )
        .unwrap();
        assert_eq!(d.matrix()[[0, 1]], 0.15);
        assert_eq!(d.matrix()[[0, 0]], 1.0);
    }

    #[test]
    fn distant_neurons_decouple() {
        let d = build_scatter_matrix(
            &layout(&[[0.0, 0.0], [100.0, 0.0]]),
            &ScatterConfig::default(),
        )
        .unwrap();
        assert_eq!(d.matrix(), &array![[1.0, 0.0], [0.0, 1.0]]);
    }

    #[test]
    fn unit_distance_kernel_value() {
        let d = build_scatter_matrix(
            &layout(&[[0.0, 0.0], [1.0, 0.0]]),
            &ScatterConfig::default(),
        )
        .unwrap();
        // 0.15 * exp(-0.5)
        assert!((d.matrix()[[0, 1]] - 0.090_979_598_956_895_02).abs() < 1e-15);
        assert_eq!(d.matrix()[[0, 1]], d.matrix()[[1, 0]]);
    }

    #[test]
    fn growing_kernel_is_selectable() {
        let cfg = ScatterConfig {
            kernel: ScatterKernel::Growing,
            ..Default::default()
        };
        let d = build_scatter_matrix(&layout(&[[0.0, 0.0], [1.0, 0.0]]), &cfg).unwrap();
        assert!((d.matrix()[[0, 1]] - 0.15 * 0.5f64.exp()).abs() < 1e-15);
    }

    #[test]
    fn singular_matrix_asks_for_ridge() {
        // Amplitude 1 with coincident neurons gives [[1,1],[1,1]].
        let cfg = ScatterConfig {
            amplitude: 1.0,
            ..Default::default()
        };
        let err = build_scatter_matrix(&layout(&[[0.0, 0.0], [0.0, 0.0]]), &cfg).unwrap_err();
        assert!(err.to_string().contains("ridge"), "{err}");
        let cfg = ScatterConfig {
            amplitude: 1.0,
            ridge: Some(1e-3),
            ..Default::default()
        };
        assert!(build_scatter_matrix(&layout(&[[0.0, 0.0], [0.0, 0.0]]), &cfg).is_ok());
    }

    #[test]
    fn identity_correction_is_noop() {
        let d = build_scatter_matrix(
            &layout(&[[0.0, 0.0], [1e3, 0.0]]),
            &ScatterConfig::default(),
        )
        .unwrap();
        let panel = FluorescencePanel::new(array![[1.0, 2.0], [3.0, 4.0]], 50.0).unwrap();
        assert_eq!(
            correct_scatter(&panel, &d).unwrap().values(),
            panel.values()
        );
    }

    #[test]
    fn two_by_two_solve() {
        let d = build_scatter_matrix(
            &layout(&[[0.5, 0.5], [0.5, 0.5]]),
            &ScatterConfig::default(),
        )
        .unwrap();
        let panel = FluorescencePanel::new(array![[1.0, 1.0], [0.0, 0.0]], 50.0).unwrap();
        let x = correct_scatter(&panel, &d).unwrap();
        let expected = 0.85 / 0.9775;
        assert!((x.values()[[0, 0]] - expected).abs() < 1e-12);
        assert!((x.values()[[0, 1]] - expected).abs() < 1e-12);
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let d = build_scatter_matrix(
            &layout(&[[0.0, 0.0], [1.0, 0.0], [2.0, 0.0]]),
            &ScatterConfig::default(),
        )
        .unwrap();
        let panel = FluorescencePanel::new(array![[1.0, 1.0], [0.0, 0.0]], 50.0).unwrap();
        assert!(matches!(
            correct_scatter(&panel, &d),
            Err(Error::Inconsistent(_))
        ));
    }

    #[test]
    fn constant_trace_has_no_spikes() {
        let panel = FluorescencePanel::new(Array2::from_elem((10, 3), 0.4), 50.0).unwrap();
        assert_eq!(discretize(&panel, 0.12).total_spikes(), 0);
    }

    #[test]
    fn threshold_rule() {
        let panel =
            FluorescencePanel::new(array![[0.0, 0.0], [0.2, 0.0], [0.25, 0.0]], 50.0).unwrap();
        let r = discretize(&panel, 0.12);
        assert_eq!(r.events().column(0).to_vec(), vec![0, 1, 0]);
    }

    #[test]
    fn ramp_spike_times() {
        let values =
            Array2::from_shape_fn((5, 2), |(t, i)| if i == 0 { 0.13 * t as f64 } else { 0.0 });
        let r = discretize(&FluorescencePanel::new(values, 50.0).unwrap(), 0.12);
        let times = &r.spike_times()[0];
        assert_eq!(times.len(), 4);
        for (got, want) in times.iter().zip([0.02, 0.04, 0.06, 0.08]) {
            assert!((got - want).abs() < 1e-12);
        }
    }

    #[test]
    fn high_activity_filter_uses_strict_inequality() {
        let mut events = Array2::<u8>::zeros((3, 10));
        events.row_mut(0).fill(1);
        events.row_mut(1).iter_mut().take(8).for_each(|e| *e = 1);
        events.row_mut(2).iter_mut().take(7).for_each(|e| *e = 1);
        let r = SpikeRaster::from_events(events, 50.0).unwrap();
        let f = remove_high_activity_frames(&r, 0.7).unwrap();
        assert_eq!(f.events().row(0).sum(), 0);
        assert_eq!(f.events().row(1).sum(), 0);
        assert_eq!(
            f.events().row(2).iter().map(|&e| e as usize).sum::<usize>(),
            7
        );
        assert_eq!(f.frames(), 3);
    }

    #[test]
    fn invalid_fraction_rejected() {
        let r = SpikeRaster::from_events(Array2::zeros((2, 2)), 50.0).unwrap();
        assert!(remove_high_activity_frames(&r, 1.0).is_err());
        assert!(remove_high_activity_frames(&r, 0.0).is_err());
    }
}
