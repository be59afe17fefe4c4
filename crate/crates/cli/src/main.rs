use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use netinfer::cirusim::{ClassWeight, Gamma, RefractoryScope};
use netinfer::dataset::{
    self, discover_networks, format_pgm, format_report, format_table, parse_score_matrix,
    write_atomic, write_score_matrix, EvalReport, NetworkFiles,
};
use netinfer::eval::{evaluate_scores, leave_one_network_out, Parallelism};
use netinfer::pipeline::{
    prepare, Method, MethodKind, MethodParams, PrecisionInput, PrepareConfig, PreparedNetwork,
};
use netinfer::preprocess::{ScatterConfig, ScatterKernel, SpikeRaster};
use netinfer::simgen::{write_benchmark, BenchmarkSpec};

/// Functional connectivity inference from calcium fluorescence recordings.
#[derive(Debug, Parser)]
#[command(name = "netinfer", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate synthetic benchmark networks with known connectivity.
    Simulate(SimulateArgs),
    /// Scatter-correct and discretize a recording into a spike raster CSV.
    Preprocess(PreprocessArgs),
    /// Score every directed pair of one network with a single method.
    Infer(InferArgs),
    /// Compare a score matrix against a network's ground truth.
    Evaluate(EvaluateArgs),
    /// Leave-one-network-out evaluation of one or more methods.
    Crossval(CrossvalArgs),
    /// Render a score matrix as a PGM heatmap.
    Heatmap(HeatmapArgs),
}

#[derive(Debug, Args)]
struct SimulateArgs {
    #[arg(long, default_value_t = 25)]
    neurons: usize,
    /// Number of networks; more than one writes net_01, net_02, ... subdirectories.
    #[arg(long, default_value_t = 1)]
    networks: usize,
    /// Probability of each directed edge.
    #[arg(long, default_value_t = 0.10)]
    density: f64,
    #[arg(long, default_value_t = 20_000)]
    frames: usize,
    #[arg(long, default_value_t = 50.0)]
    rate: f64,
    /// Background firing rate in Hz.
    #[arg(long, default_value_t = 0.5)]
    mu: f64,
    /// Expected children per parent spike along an edge.
    #[arg(long, default_value_t = 0.25)]
    weight_scale: f64,
    /// Excitation kernel decay in 1/s.
    #[arg(long, default_value_t = 10.0)]
    kernel_decay: f64,
    /// Per-frame calcium retention.
    #[arg(long, default_value_t = 0.9)]
    calcium_decay: f64,
    #[arg(long, default_value_t = 0.03)]
    noise: f64,
    #[arg(long, default_value_t = 0.15)]
    scatter: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum KernelArg {
    Decaying,
    Growing,
}

#[derive(Debug, Args)]
struct PrepArgs {
    /// Sampling rate of the fluorescence files in Hz.
    #[arg(long, default_value_t = 50.0)]
    rate: f64,
    /// First-difference spike threshold.
    #[arg(long, default_value_t = 0.12)]
    threshold: f64,
    /// Light-scatter amplitude between neighbouring neurons.
    #[arg(long, default_value_t = 0.15)]
    scatter_amplitude: f64,
    #[arg(long, value_enum, default_value_t = KernelArg::Decaying)]
    scatter_kernel: KernelArg,
    /// Skip scatter correction.
    #[arg(long)]
    no_scatter: bool,
    /// Frames with more than this fraction of neurons active are zeroed before span extraction.
    #[arg(long, default_value_t = 0.7)]
    high_activity: f64,
}

impl PrepArgs {
    fn config(&self) -> PrepareConfig {
        let scatter = (!self.no_scatter).then(|| ScatterConfig {
            amplitude: self.scatter_amplitude,
            kernel: match self.scatter_kernel {
                KernelArg::Decaying => ScatterKernel::Decaying,
                KernelArg::Growing => ScatterKernel::Growing,
            },
            ..ScatterConfig::default()
        });
        PrepareConfig {
            scatter,
            spike_threshold: self.threshold,
            high_activity_fraction: self.high_activity,
        }
    }
}

#[derive(Debug, Args)]
struct PreprocessArgs {
    /// Directory holding the network files.
    #[arg(long = "in")]
    input: PathBuf,
    /// Network id when the directory holds several.
    #[arg(long)]
    network: Option<String>,
    #[command(flatten)]
    prep: PrepArgs,
    /// Write the raster after zeroing high-activity frames.
    #[arg(long)]
    filtered: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum InputArg {
    Raster,
    Fluorescence,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ScopeArg {
    Source,
    Any,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum WeightArg {
    Balanced,
    Uniform,
}

#[derive(Debug, Args)]
struct MethodArgs {
    /// xcorr: lags in frames, comma separated [default: 1]
    #[arg(long, value_delimiter = ',')]
    lag: Option<Vec<usize>>,
    /// glasso: penalty as a fraction of the largest off-diagonal covariance [default: 0.05]
    #[arg(long)]
    lambda: Option<f64>,
    /// glasso: sweep limit [default: 100]
    #[arg(long)]
    max_sweeps: Option<usize>,
    /// pca: fraction of variance kept [default: 0.8]
    #[arg(long)]
    variance_kept: Option<f64>,
    /// pca, glasso: covariance input [default: raster]
    #[arg(long, value_enum)]
    precision_input: Option<InputArg>,
    /// pca, glasso: summation filter length for the raster input [default: 3]
    #[arg(long)]
    smoothing: Option<usize>,
    /// hawkes: EM iterations [default: 100]
    #[arg(long)]
    iterations: Option<usize>,
    /// hawkes: initial kernel decay in 1/s [default: 10]
    #[arg(long)]
    theta_init: Option<f64>,
    /// hawkes: parent window in seconds [default: 10 / theta-init]
    #[arg(long)]
    window: Option<f64>,
    /// cirusim: refractory window in seconds [default: 1.0]
    #[arg(long)]
    refractory: Option<f64>,
    /// cirusim: spikes that open a refractory window [default: source]
    #[arg(long, value_enum)]
    refractory_scope: Option<ScopeArg>,
    /// cirusim: SVM penalty [default: 1.0]
    #[arg(long = "c")]
    svm_c: Option<f64>,
    /// cirusim: RBF gamma [default: 1 / (features * variance)]
    #[arg(long)]
    gamma: Option<f64>,
    /// cirusim: SVM class weights [default: balanced]
    #[arg(long, value_enum)]
    class_weight: Option<WeightArg>,
}

impl MethodArgs {
    /// Flags given on the command line with the methods that accept them.
    fn given(&self) -> Vec<(&'static str, &'static [MethodKind])> {
        use MethodKind::*;
        let flags: [(&'static str, bool, &'static [MethodKind]); 14] = [
            ("--lag", self.lag.is_some(), &[Xcorr]),
            ("--lambda", self.lambda.is_some(), &[Glasso]),
            ("--max-sweeps", self.max_sweeps.is_some(), &[Glasso]),
            ("--variance-kept", self.variance_kept.is_some(), &[Pca]),
            (
                "--precision-input",
                self.precision_input.is_some(),
                &[Pca, Glasso],
            ),
            ("--smoothing", self.smoothing.is_some(), &[Pca, Glasso]),
            ("--iterations", self.iterations.is_some(), &[Hawkes]),
            ("--theta-init", self.theta_init.is_some(), &[Hawkes]),
            ("--window", self.window.is_some(), &[Hawkes]),
            ("--refractory", self.refractory.is_some(), &[Cirusim]),
            (
                "--refractory-scope",
                self.refractory_scope.is_some(),
                &[Cirusim],
            ),
            ("--c", self.svm_c.is_some(), &[Cirusim]),
            ("--gamma", self.gamma.is_some(), &[Cirusim]),
            ("--class-weight", self.class_weight.is_some(), &[Cirusim]),
        ];
        flags
            .into_iter()
            .filter(|f| f.1)
            .map(|f| (f.0, f.2))
            .collect()
    }

    fn validate(&self, selected: &[MethodKind]) -> Result<(), Failure> {
        for (flag, users) in self.given() {
            if !users.iter().any(|m| selected.contains(m)) {
                let names: Vec<&str> = users.iter().map(|m| m.name()).collect();
                return Err(Failure::Usage(format!(
                    "{flag} applies only to {}",
                    names.join(", ")
                )));
            }
        }
        let positive = [
            ("--lambda", self.lambda.map(|v| v >= 0.0)),
            (
                "--variance-kept",
                self.variance_kept.map(|v| v > 0.0 && v <= 1.0),
            ),
            ("--theta-init", self.theta_init.map(|v| v > 0.0)),
            ("--window", self.window.map(|v| v > 0.0)),
            ("--refractory", self.refractory.map(|v| v >= 0.0)),
            ("--c", self.svm_c.map(|v| v > 0.0)),
            ("--gamma", self.gamma.map(|v| v > 0.0)),
            ("--smoothing", self.smoothing.map(|v| v >= 1)),
            ("--iterations", self.iterations.map(|v| v >= 1)),
            ("--max-sweeps", self.max_sweeps.map(|v| v >= 1)),
        ];
        for (flag, ok) in positive {
            if ok == Some(false) {
                return Err(Failure::Usage(format!("{flag} is out of range")));
            }
        }
        Ok(())
    }

    fn params(&self) -> MethodParams {
        let mut p = MethodParams::default();
        if let Some(v) = &self.lag {
            p.lags = v.clone();
        }
        if let Some(v) = self.lambda {
            p.lambda_factor = v;
        }
        if let Some(v) = self.max_sweeps {
            p.max_sweeps = v;
        }
        if let Some(v) = self.variance_kept {
            p.variance_kept = v;
        }
        if let Some(v) = self.precision_input {
            p.precision_input = match v {
                InputArg::Raster => PrecisionInput::SmoothedRaster,
                InputArg::Fluorescence => PrecisionInput::Fluorescence,
            };
        }
        if let Some(v) = self.smoothing {
            p.smoothing_length = v;
        }
        if let Some(v) = self.iterations {
            p.em.iterations = v;
        }
        if let Some(v) = self.theta_init {
            p.em.theta_init = v;
        }
        p.em.window = self.window;
        if let Some(v) = self.refractory {
            p.cirusim.refractory_s = v;
        }
        if let Some(v) = self.refractory_scope {
            p.cirusim.scope = match v {
                ScopeArg::Source => RefractoryScope::SourceNeuron,
                ScopeArg::Any => RefractoryScope::AnyNeuron,
            };
        }
        if let Some(v) = self.svm_c {
            p.cirusim.svm.c = v;
        }
        if let Some(v) = self.gamma {
            p.cirusim.svm.gamma = Gamma::Value(v);
        }
        if let Some(v) = self.class_weight {
            p.cirusim.svm.class_weight = match v {
                WeightArg::Balanced => ClassWeight::Balanced,
                WeightArg::Uniform => ClassWeight::Uniform,
            };
        }
        p
    }
}

fn parse_method(s: &str) -> Result<MethodKind, String> {
    s.parse::<MethodKind>().map_err(|e| match e {
        netinfer::Error::InvalidInput(m) => m,
        other => other.to_string(),
    })
}

#[derive(Debug, Args)]
struct InferArgs {
    #[arg(long, value_parser = parse_method)]
    method: MethodKind,
    /// Directory holding the network to score.
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    network: Option<String>,
    /// Directory of labelled training networks (cirusim only).
    #[arg(long)]
    train: Option<PathBuf>,
    #[command(flatten)]
    prep: PrepArgs,
    #[command(flatten)]
    method_args: MethodArgs,
    /// Also write a PGM heatmap next to the score file.
    #[arg(long)]
    pgm: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    /// Score matrix CSV.
    #[arg(long)]
    scores: PathBuf,
    /// Directory holding the network and its ground truth.
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    network: Option<String>,
    /// Method name recorded in the report.
    #[arg(long, default_value = "scores")]
    method: String,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct CrossvalArgs {
    #[arg(long, value_delimiter = ',', value_parser = parse_method,
          default_value = "xcorr,pca,glasso,hawkes,cirusim")]
    methods: Vec<MethodKind>,
    /// Directory of networks with ground truth.
    #[arg(long = "in")]
    input: PathBuf,
    #[command(flatten)]
    prep: PrepArgs,
    #[command(flatten)]
    method_args: MethodArgs,
    /// Folds evaluated concurrently.
    #[arg(long, env = "NETINFER_JOBS", default_value_t = 1)]
    jobs: usize,
    /// Summary table file.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Directory for one detailed report per method.
    #[arg(long)]
    report_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct HeatmapArgs {
    #[arg(long)]
    scores: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug)]
enum Failure {
    Usage(String),
    Data(netinfer::Error),
}

impl From<netinfer::Error> for Failure {
    fn from(e: netinfer::Error) -> Self {
        Failure::Data(e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Data(e.into())
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Data(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn run(command: Command) -> Result<(), Failure> {
    match command {
        Command::Simulate(a) => simulate(a),
        Command::Preprocess(a) => preprocess(a),
        Command::Infer(a) => infer(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Crossval(a) => crossval(a),
        Command::Heatmap(a) => heatmap(a),
    }
}

fn simulate(a: SimulateArgs) -> Result<(), Failure> {
    if a.rate <= 0.0 || a.frames < 2 {
        return Err(Failure::Usage(
            "--frames must be at least 2 and --rate positive".into(),
        ));
    }
    if a.networks == 0 {
        return Err(Failure::Usage("--networks must be at least 1".into()));
    }
    let spec = BenchmarkSpec {
        neuron_count: a.neurons,
        density: a.density,
        duration_s: a.frames as f64 / a.rate,
        sample_rate_hz: a.rate,
        mu_hz: a.mu,
        weight_scale: a.weight_scale,
        kernel_decay: a.kernel_decay,
        calcium_decay: a.calcium_decay,
        noise_std: a.noise,
        scatter_amplitude: a.scatter,
        seed: a.seed,
    };
    spec.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    let dirs = write_benchmark(&spec, a.networks, &a.out)?;
    for d in dirs {
        println!("{}", d.display());
    }
    Ok(())
}

/// The single network in `dir`, or the one named `id`.
fn select_network(dir: &Path, id: Option<&str>) -> Result<NetworkFiles, Failure> {
    let found = discover_networks(dir)?;
    match id {
        Some(id) => found.into_iter().find(|n| n.id == id).ok_or_else(|| {
            Failure::Data(netinfer::Error::Inconsistent(format!(
                "no network '{id}' in {}",
                dir.display()
            )))
        }),
        None => match found.len() {
            0 => Err(Failure::Data(netinfer::Error::Inconsistent(format!(
                "no fluorescence/positions files in {}",
                dir.display()
            )))),
            1 => Ok(found.into_iter().next().expect("one network")),
            _ => {
                let ids: Vec<&str> = found.iter().map(|n| n.id.as_str()).collect();
                Err(Failure::Usage(format!(
                    "{} holds several networks ({}); pick one with --network",
                    dir.display(),
                    ids.join(", ")
                )))
            }
        },
    }
}

fn load_prepared(
    files: &NetworkFiles,
    prep: &PrepArgs,
    need_truth: bool,
) -> Result<PreparedNetwork, Failure> {
    if need_truth && files.network.is_none() {
        return Err(Failure::Data(netinfer::Error::Inconsistent(format!(
            "network {} has no ground-truth file",
            files.id
        ))));
    }
    let ds = dataset::load_dataset(
        &files.fluorescence,
        &files.positions,
        files.network.as_deref(),
        prep.rate,
    )?;
    Ok(prepare(files.id.clone(), &ds, &prep.config())?)
}

fn check_prep(prep: &PrepArgs) -> Result<(), Failure> {
    if !(prep.rate > 0.0) {
        return Err(Failure::Usage("--rate must be positive".into()));
    }
    if !(prep.high_activity > 0.0 && prep.high_activity < 1.0) {
        return Err(Failure::Usage("--high-activity must be in (0, 1)".into()));
    }
    if !(prep.scatter_amplitude >= 0.0) {
        return Err(Failure::Usage(
            "--scatter-amplitude must be nonnegative".into(),
        ));
    }
    Ok(())
}

fn format_raster(raster: &SpikeRaster) -> String {
    let mut out = String::with_capacity(raster.frames() * raster.neuron_count() * 2);
    for row in raster.events().rows() {
        for (k, v) in row.iter().enumerate() {
            if k > 0 {
                out.push(',');
            }
            let _ = write!(out, "{v}");
        }
        out.push('\n');
    }
    out
}

fn preprocess(a: PreprocessArgs) -> Result<(), Failure> {
    check_prep(&a.prep)?;
    let files = select_network(&a.input, a.network.as_deref())?;
    let net = load_prepared(&files, &a.prep, false)?;
    let raster = if a.filtered {
        &net.filtered
    } else {
        &net.raster
    };
    write_atomic(&a.out, format_raster(raster).as_bytes())?;
    Ok(())
}

fn infer(a: InferArgs) -> Result<(), Failure> {
    check_prep(&a.prep)?;
    a.method_args.validate(&[a.method])?;
    if a.method.is_supervised() && a.train.is_none() {
        return Err(Failure::Usage(format!(
            "{} needs labelled networks via --train",
            a.method
        )));
    }
    if !a.method.is_supervised() && a.train.is_some() {
        return Err(Failure::Usage(format!(
            "--train applies only to supervised methods, not {}",
            a.method
        )));
    }
    let files = select_network(&a.input, a.network.as_deref())?;
    let test = load_prepared(&files, &a.prep, false)?;
    let mut training = Vec::new();
    if let Some(dir) = &a.train {
        for f in discover_networks(dir)? {
            if f.fluorescence != files.fluorescence {
                training.push(load_prepared(&f, &a.prep, true)?);
            }
        }
        if training.is_empty() {
            return Err(Failure::Data(netinfer::Error::Inconsistent(format!(
                "no labelled training networks in {}",
                dir.display()
            ))));
        }
    }
    let method = Method::with_params(a.method, a.method_args.params());
    let refs: Vec<&PreparedNetwork> = training.iter().collect();
    let scores = method.score_network(&refs, &test)?;
    write_score_matrix(&scores, &a.out, a.pgm)?;
    Ok(())
}

fn read_scores(path: &Path, tag: &str) -> Result<netinfer::dataset::ScoreMatrix, Failure> {
    let text = fs::read_to_string(path)
        .map_err(|e| std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))?;
    Ok(parse_score_matrix(&text, tag, &path.display().to_string())?)
}

fn evaluate(a: EvaluateArgs) -> Result<(), Failure> {
    let scores = read_scores(&a.scores, &a.method)?;
    let files = select_network(&a.input, a.network.as_deref())?;
    let Some(network) = &files.network else {
        return Err(Failure::Data(netinfer::Error::Inconsistent(format!(
            "network {} has no ground-truth file",
            files.id
        ))));
    };
    let text = fs::read_to_string(network)?;
    let truth =
        dataset::parse_network(&text, scores.neuron_count(), &network.display().to_string())?;
    let fold = evaluate_scores(&files.id, &scores, &truth, 0.0)?;
    let report = EvalReport::from_folds(a.method, vec![fold])?;
    let text = format_report(&report);
    match &a.out {
        Some(path) => write_atomic(path, text.as_bytes())?,
        None => print!("{text}"),
    }
    Ok(())
}

fn crossval(a: CrossvalArgs) -> Result<(), Failure> {
    check_prep(&a.prep)?;
    if a.methods.is_empty() {
        return Err(Failure::Usage(
            "--methods must name at least one method".into(),
        ));
    }
    if a.jobs == 0 {
        return Err(Failure::Usage("--jobs must be at least 1".into()));
    }
    a.method_args.validate(&a.methods)?;
    let files = discover_networks(&a.input)?;
    if files.is_empty() {
        return Err(Failure::Data(netinfer::Error::Inconsistent(format!(
            "no networks found in {}",
            a.input.display()
        ))));
    }
    let networks = files
        .iter()
        .map(|f| load_prepared(f, &a.prep, true))
        .collect::<Result<Vec<_>, _>>()?;
    let parallelism = if a.jobs > 1 {
        Parallelism::Threads(a.jobs)
    } else {
        Parallelism::Sequential
    };
    let params = a.method_args.params();
    let mut reports = Vec::with_capacity(a.methods.len());
    for &kind in &a.methods {
        let method = Method::with_params(kind, params.clone());
        reports.push(leave_one_network_out(&networks, &method, parallelism)?);
    }
    let table = format_table(&reports);
    if let Some(dir) = &a.report_dir {
        fs::create_dir_all(dir)?;
        for r in &reports {
            write_atomic(
                &dir.join(format!("{}.txt", r.method_tag)),
                format_report(r).as_bytes(),
            )?;
        }
    }
    if let Some(path) = &a.out {
        write_atomic(path, table.as_bytes())?;
    }
    print!("{table}");
    Ok(())
}

fn heatmap(a: HeatmapArgs) -> Result<(), Failure> {
    let scores = read_scores(&a.scores, "scores")?;
    write_atomic(&a.out, format_pgm(&scores).as_bytes())?;
    Ok(())
}
