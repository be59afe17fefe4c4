//! Synthetic benchmarks with known connectivity: a sparse random network
//! drives the Hawkes simulator, spikes are filtered through calcium dynamics,
//! and the fluorescence is corrupted by noise and light scatter.

use std::path::{Path, PathBuf};

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::dataset::{
    format_fluorescence, format_network, format_positions, write_atomic, FluorescencePanel,
    GroundTruthNetwork, NeuronLayout,
};
use crate::error::{Error, Result};
use crate::hawkes::{self, HawkesModel};
use crate::preprocess::{build_scatter_matrix, ScatterConfig, ScatterKernel, SpikeRaster};

/// Largest spectral radius a sampled weight matrix is allowed to keep.
pub const MAX_SPECTRAL_RADIUS: f64 = 0.8;

const NETWORK_STREAM: u64 = 0;
const SPIKE_STREAM: u64 = 1;
const NOISE_STREAM: u64 = 2;

#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkSpec {
    pub neuron_count: usize,
    pub density: f64,
    pub duration_s: f64,
    pub sample_rate_hz: f64,
    pub mu_hz: f64,
    pub weight_scale: f64,
    /// Decay of the excitation kernel in 1/s.
    pub kernel_decay: f64,
    /// Per-frame calcium retention.
    pub calcium_decay: f64,
    pub noise_std: f64,
    pub scatter_amplitude: f64,
    pub seed: u64,
}

impl Default for BenchmarkSpec {
    fn default() -> Self {
        Self {
            neuron_count: 25,
            density: 0.10,
            duration_s: 400.0,
            sample_rate_hz: 50.0,
            mu_hz: 0.5,
            weight_scale: 0.25,
            kernel_decay: hawkes::DEFAULT_THETA_INIT,
            calcium_decay: 0.9,
            noise_std: 0.03,
            scatter_amplitude: 0.15,
            seed: 0,
        }
    }
}

impl BenchmarkSpec {
    pub fn with_seed(seed: u64) -> Self {
        Self {
            seed,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.neuron_count < 2 {
            return Err(Error::invalid("a benchmark needs at least 2 neurons"));
        }
        if !(self.density > 0.0 && self.density < 1.0) {
            return Err(Error::invalid(format!(
                "density must be in (0, 1), got {}",
                self.density
            )));
        }
        let positive = [
            ("duration", self.duration_s),
            ("sample rate", self.sample_rate_hz),
            ("background rate", self.mu_hz),
            ("weight scale", self.weight_scale),
            ("kernel decay", self.kernel_decay),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::invalid(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.calcium_decay >= 0.0 && self.calcium_decay < 1.0) {
            return Err(Error::invalid("calcium decay must be in [0, 1)"));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return Err(Error::invalid("noise std must be nonnegative"));
        }
        if !(self.scatter_amplitude >= 0.0 && self.scatter_amplitude < 1.0) {
            return Err(Error::invalid("scatter amplitude must be in [0, 1)"));
        }
        if (self.duration_s * self.sample_rate_hz).round() < 2.0 {
            return Err(Error::invalid("recording must span at least 2 frames"));
        }
        Ok(())
    }

    fn rng(&self, stream: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(stream);
        rng
    }
}

/// Independent edges with probability `density`, uniform weights, and
/// positions uniform in the unit square.
pub fn sample_network(
    spec: &BenchmarkSpec,
) -> Result<(GroundTruthNetwork, HawkesModel, NeuronLayout)> {
    spec.validate()?;
    let n = spec.neuron_count;
    let mut rng = spec.rng(NETWORK_STREAM);
    let mut edges = Array2::<u8>::zeros((n, n));
    for i in 0..n {
        for j in 0..n {
            let u: f64 = rng.random();
            if i != j && u < spec.density {
                edges[[i, j]] = 1;
            }
        }
    }
    let positions: Vec<[f64; 2]> = (0..n).map(|_| [rng.random(), rng.random()]).collect();

    let mut weights = edges.mapv(|e| f64::from(e) * spec.weight_scale);
    let mut model = HawkesModel::new(vec![spec.mu_hz; n], weights.clone(), spec.kernel_decay)?;
    let radius = model.spectral_radius();
    if radius > MAX_SPECTRAL_RADIUS {
        weights.mapv_inplace(|w| w * MAX_SPECTRAL_RADIUS / radius);
        model = HawkesModel::new(vec![spec.mu_hz; n], weights, spec.kernel_decay)?;
    }
    Ok((
        GroundTruthNetwork::new(edges)?,
        model,
        NeuronLayout::new(positions)?,
    ))
}

/// `C_t = decay * C_(t-1) + s_t` per neuron, starting from zero.
pub fn calcium_traces(raster: &SpikeRaster, decay: f64) -> Array2<f64> {
    let events = raster.events();
    let mut values = Array2::<f64>::zeros(events.dim());
    for t in 0..raster.frames() {
        for k in 0..raster.neuron_count() {
            let prev = if t > 0 { values[[t - 1, k]] } else { 0.0 };
            values[[t, k]] = decay * prev + f64::from(events[[t, k]]);
        }
    }
    values
}

/// Observed (noisy, scattered) fluorescence and the true spike raster.
pub fn synthesize_recording(
    truth: &GroundTruthNetwork,
    model: &HawkesModel,
    layout: &NeuronLayout,
    spec: &BenchmarkSpec,
) -> Result<(FluorescencePanel, SpikeRaster)> {
    spec.validate()?;
    let n = truth.neuron_count();
    if model.neuron_count() != n || layout.neuron_count() != n {
        return Err(Error::Inconsistent(
            "network, model and layout disagree on neuron count".into(),
        ));
    }
    let mut spike_rng = spec.rng(SPIKE_STREAM);
    let raster = hawkes::simulate(
        model,
        spec.duration_s,
        spec.sample_rate_hz,
        spike_rng.random(),
    )?;

    let mut values = calcium_traces(&raster, spec.calcium_decay);
    if spec.noise_std > 0.0 {
        let normal = Normal::new(0.0, spec.noise_std).map_err(|e| Error::invalid(e.to_string()))?;
        let mut noise_rng = spec.rng(NOISE_STREAM);
        for v in values.iter_mut() {
            *v += normal.sample(&mut noise_rng);
        }
    }
    let clean = FluorescencePanel::new(values, spec.sample_rate_hz)?;
    let config = ScatterConfig {
        amplitude: spec.scatter_amplitude,
        kernel: ScatterKernel::Decaying,
        ..ScatterConfig::default()
    };
    let observed = build_scatter_matrix(layout, &config)?.scatter(&clean)?;
    Ok((observed, raster))
}

#[derive(Debug, Clone)]
pub struct Benchmark {
    pub truth: GroundTruthNetwork,
    pub model: HawkesModel,
    pub layout: NeuronLayout,
    pub panel: FluorescencePanel,
    pub raster: SpikeRaster,
}

pub fn generate(spec: &BenchmarkSpec) -> Result<Benchmark> {
    let (truth, model, layout) = sample_network(spec)?;
    let (panel, raster) = synthesize_recording(&truth, &model, &layout, spec)?;
    Ok(Benchmark {
        truth,
        model,
        layout,
        panel,
        raster,
    })
}

/// `count` networks seeded `spec.seed, spec.seed + 1, ...`, generated in
/// parallel and returned in seed order.
pub fn generate_many(spec: &BenchmarkSpec, count: usize) -> Result<Vec<Benchmark>> {
    (0..count as u64)
        .into_par_iter()
        .map(|k| {
            generate(&BenchmarkSpec {
                seed: spec.seed.wrapping_add(k),
                ..spec.clone()
            })
        })
        .collect()
}

/// Writes `fluorescence.csv`, `positions.csv` and `network.csv` into `dir`.
pub fn write_network_files(bench: &Benchmark, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    write_atomic(
        &dir.join("fluorescence.csv"),
        format_fluorescence(&bench.panel).as_bytes(),
    )?;
    write_atomic(
        &dir.join("positions.csv"),
        format_positions(&bench.layout).as_bytes(),
    )?;
    write_atomic(
        &dir.join("network.csv"),
        format_network(&bench.truth).as_bytes(),
    )?;
    Ok(())
}

/// One network directly in `dir`, or `net_01`, `net_02`, ... subdirectories
/// when `count > 1`. Everything is generated before the first file is
/// written. Returns the directories written.
pub fn write_benchmark(spec: &BenchmarkSpec, count: usize, dir: &Path) -> Result<Vec<PathBuf>> {
    if count == 0 {
        return Err(Error::invalid("network count must be at least 1"));
    }
    let benches = generate_many(spec, count)?;
    let width = count.to_string().len().max(2);
    let mut written = Vec::with_capacity(count);
    for (k, bench) in benches.iter().enumerate() {
        let target = if count == 1 {
            dir.to_path_buf()
        } else {
            dir.join(format!("net_{:0width$}", k + 1))
        };
        write_network_files(bench, &target)?;
        written.push(target);
    }
    Ok(written)
}
