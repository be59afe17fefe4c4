//! Recordings, layouts, ground-truth networks, score matrices and reports,
//! together with the text formats used to persist them.
//!
//! File conventions:
//!
//! * fluorescence: comma-separated, one row per time step, one column per neuron;
//! * positions: one `x,y` row per neuron;
//! * network: `i,j,w` rows with **1-based** neuron indices. A row with `w > 0`
//!   marks the directed edge `i -> j`; rows with `w <= 0` (inhibitory links in
//!   the competition files) are dropped. Indices are converted to 0-based.
//! * score matrices: comma-separated `N x N`, row-major, 9 decimals.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array2;

use crate::error::{Error, Result};

pub const DEFAULT_SAMPLE_RATE_HZ: f64 = 50.0;

/// `T x N` fluorescence traces.
#[derive(Debug, Clone, PartialEq)]
pub struct FluorescencePanel {
    values: Array2<f64>,
    sample_rate_hz: f64,
}

impl FluorescencePanel {
    pub fn new(values: Array2<f64>, sample_rate_hz: f64) -> Result<Self> {
        let (frames, neurons) = values.dim();
        if frames < 2 {
            return Err(Error::invalid(format!(
                "panel needs at least 2 frames, got {frames}"
            )));
        }
        if neurons < 2 {
            return Err(Error::invalid(format!(
                "panel needs at least 2 neurons, got {neurons}"
            )));
        }
        if !(sample_rate_hz.is_finite() && sample_rate_hz > 0.0) {
            return Err(Error::invalid(format!(
                "sample rate must be positive, got {sample_rate_hz}"
            )));
        }
        if let Some(((t, n), v)) = values.indexed_iter().find(|(_, v)| !v.is_finite()) {
            return Err(Error::invalid(format!(
                "non-finite fluorescence {v} at frame {t}, neuron {n}"
            )));
        }
        Ok(Self {
            values,
            sample_rate_hz,
        })
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn into_values(self) -> Array2<f64> {
        self.values
    }

    pub fn frames(&self) -> usize {
        self.values.nrows()
    }

    pub fn neuron_count(&self) -> usize {
        self.values.ncols()
    }

    pub fn sample_rate_hz(&self) -> f64 {
        self.sample_rate_hz
    }

    pub fn duration_s(&self) -> f64 {
        self.frames() as f64 / self.sample_rate_hz
    }
}

/// Planar neuron positions in normalized spatial units.
#[derive(Debug, Clone, PartialEq)]
pub struct NeuronLayout {
    positions: Vec<[f64; 2]>,
}

impl NeuronLayout {
    pub fn new(positions: Vec<[f64; 2]>) -> Result<Self> {
        if let Some(i) = positions
            .iter()
            .position(|p| !(p[0].is_finite() && p[1].is_finite()))
        {
            return Err(Error::invalid(format!(
                "non-finite position for neuron {i}"
            )));
        }
        Ok(Self { positions })
    }

    pub fn positions(&self) -> &[[f64; 2]] {
        &self.positions
    }

    pub fn neuron_count(&self) -> usize {
        self.positions.len()
    }
}

/// Binary directed connectivity; `edges[[i, j]] == 1` iff `i` synapses onto `j`.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruthNetwork {
    edges: Array2<u8>,
}

impl GroundTruthNetwork {
    pub fn new(edges: Array2<u8>) -> Result<Self> {
        if !edges.is_square() {
            return Err(Error::invalid("ground truth must be square"));
        }
        if edges.iter().any(|&e| e > 1) {
            return Err(Error::invalid("ground truth entries must be 0 or 1"));
        }
        if edges.diag().iter().any(|&e| e != 0) {
            return Err(Error::invalid("ground truth must have a zero diagonal"));
        }
        Ok(Self { edges })
    }

    pub fn edges(&self) -> &Array2<u8> {
        &self.edges
    }

    pub fn neuron_count(&self) -> usize {
        self.edges.nrows()
    }

    pub fn has_edge(&self, from: usize, to: usize) -> bool {
        self.edges[[from, to]] == 1
    }

    pub fn edge_count(&self) -> usize {
        self.edges.iter().filter(|&&e| e == 1).count()
    }

    /// Fraction of the `N (N - 1)` possible directed edges that are present.
    pub fn density(&self) -> f64 {
        let n = self.neuron_count();
        if n < 2 {
            return 0.0;
        }
        self.edge_count() as f64 / (n * (n - 1)) as f64
    }
}

/// Directed connection scores in `[0, 1]` with an exactly zero diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMatrix {
    scores: Array2<f64>,
    method_tag: String,
}

impl ScoreMatrix {
    pub fn new(scores: Array2<f64>, method_tag: impl Into<String>) -> Result<Self> {
        if !scores.is_square() {
            return Err(Error::invalid("score matrix must be square"));
        }
        for ((i, j), &v) in scores.indexed_iter() {
            if !v.is_finite() || !(0.0..=1.0).contains(&v) {
                return Err(Error::invalid(format!(
                    "score {v} at ({i}, {j}) outside [0, 1]"
                )));
            }
            if i == j && v != 0.0 {
                return Err(Error::invalid(format!(
                    "diagonal score {v} at ({i}, {i}) must be 0"
                )));
            }
        }
        Ok(Self {
            scores,
            method_tag: method_tag.into(),
        })
    }

    /// Zeroes the diagonal of `raw` and min-max normalizes the off-diagonal
    /// entries onto `[0, 1]`. When all off-diagonal entries are equal the
    /// result is all zeros.
    pub fn from_raw_min_max(mut raw: Array2<f64>, method_tag: impl Into<String>) -> Result<Self> {
        if !raw.is_square() {
            return Err(Error::invalid("raw score matrix must be square"));
        }
        let n = raw.nrows();
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for ((i, j), &v) in raw.indexed_iter() {
            if i == j {
                continue;
            }
            if !v.is_finite() {
                return Err(Error::Numerical(format!(
                    "non-finite raw score at ({i}, {j})"
                )));
            }
            lo = lo.min(v);
            hi = hi.max(v);
        }
        let span = hi - lo;
        for ((i, j), v) in raw.indexed_iter_mut() {
            *v = if i == j || n < 2 || span <= 0.0 {
                0.0
            } else {
                ((*v - lo) / span).clamp(0.0, 1.0)
            };
        }
        Self::new(raw, method_tag)
    }

    pub fn scores(&self) -> &Array2<f64> {
        &self.scores
    }

    pub fn method_tag(&self) -> &str {
        &self.method_tag
    }

    pub fn neuron_count(&self) -> usize {
        self.scores.nrows()
    }

    pub fn get(&self, from: usize, to: usize) -> f64 {
        self.scores[[from, to]]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FoldResult {
    pub network_id: String,
    pub auc: f64,
    pub prc: f64,
    pub seconds: f64,
}

/// One method's evaluation: per-fold values and their means.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub method_tag: String,
    pub auc: f64,
    pub prc: f64,
    pub per_fold: Vec<FoldResult>,
    /// Mean wall-clock seconds per fold.
    pub wall_clock_seconds: f64,
}

impl EvalReport {
    pub fn from_folds(method_tag: impl Into<String>, per_fold: Vec<FoldResult>) -> Result<Self> {
        if per_fold.is_empty() {
            return Err(Error::invalid(
                "an evaluation report needs at least one fold",
            ));
        }
        for f in &per_fold {
            if !(0.0..=1.0).contains(&f.auc) || !(0.0..=1.0).contains(&f.prc) {
                return Err(Error::invalid(format!(
                    "fold {} has metrics outside [0, 1]",
                    f.network_id
                )));
            }
            if !(f.seconds >= 0.0) {
                return Err(Error::invalid(format!(
                    "fold {} has negative duration",
                    f.network_id
                )));
            }
        }
        let k = per_fold.len() as f64;
        let auc = per_fold.iter().map(|f| f.auc).sum::<f64>() / k;
        let prc = per_fold.iter().map(|f| f.prc).sum::<f64>() / k;
        let wall_clock_seconds = per_fold.iter().map(|f| f.seconds).sum::<f64>() / k;
        Ok(Self {
            method_tag: method_tag.into(),
            auc,
            prc,
            per_fold,
            wall_clock_seconds,
        })
    }

    /// `method,auc,prc,seconds`
    pub fn summary_line(&self) -> String {
        format!(
            "{},{:.3},{:.3},{:.1}",
            self.method_tag, self.auc, self.prc, self.wall_clock_seconds
        )
    }
}

/// Recording plus layout and, when available, the ground truth.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub panel: FluorescencePanel,
    pub layout: NeuronLayout,
    pub truth: Option<GroundTruthNetwork>,
}

fn split_fields(line: &str) -> impl Iterator<Item = &str> {
    line.split(',').map(str::trim)
}

fn parse_number(source_name: &str, line_no: usize, token: &str) -> Result<f64> {
    token
        .parse::<f64>()
        .map_err(|_| Error::parse(source_name, line_no, format!("non-numeric token {token:?}")))
}

/// Non-empty lines with their 1-based line numbers.
fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty())
}

pub fn parse_fluorescence(
    text: &str,
    sample_rate_hz: f64,
    source_name: &str,
) -> Result<FluorescencePanel> {
    let mut width = None;
    let mut data = Vec::new();
    let mut rows = 0;
    for (line_no, line) in content_lines(text) {
        let start = data.len();
        for tok in split_fields(line) {
            data.push(parse_number(source_name, line_no, tok)?);
        }
        let got = data.len() - start;
        match width {
            None => width = Some(got),
            Some(w) if w != got => {
                return Err(Error::parse(
                    source_name,
                    line_no,
                    format!("expected {w} columns, found {got}"),
                ))
            }
            _ => {}
        }
        rows += 1;
    }
    let width = width.ok_or_else(|| Error::parse(source_name, 1, "empty fluorescence file"))?;
    let values = Array2::from_shape_vec((rows, width), data).expect("row widths checked");
    FluorescencePanel::new(values, sample_rate_hz)
}

pub fn parse_positions(text: &str, source_name: &str) -> Result<NeuronLayout> {
    let mut positions = Vec::new();
    for (line_no, line) in content_lines(text) {
        let fields: Vec<&str> = split_fields(line).collect();
        if fields.len() != 2 {
            return Err(Error::parse(
                source_name,
                line_no,
                format!("expected 2 columns (x,y), found {}", fields.len()),
            ));
        }
        positions.push([
            parse_number(source_name, line_no, fields[0])?,
            parse_number(source_name, line_no, fields[1])?,
        ]);
    }
    NeuronLayout::new(positions)
}

/// Parses `i,j,w` rows for a network of `neuron_count` neurons. An edge is
/// present iff at least one row for it has `w > 0`, so row order is irrelevant.
/// Self-loops are ignored.
pub fn parse_network(
    text: &str,
    neuron_count: usize,
    source_name: &str,
) -> Result<GroundTruthNetwork> {
    let mut edges = Array2::<u8>::zeros((neuron_count, neuron_count));
    for (line_no, line) in content_lines(text) {
        let fields: Vec<&str> = split_fields(line).collect();
        if fields.len() != 3 {
            return Err(Error::parse(
                source_name,
                line_no,
                format!("expected 3 columns (i,j,w), found {}", fields.len()),
            ));
        }
        let index = |tok: &str| -> Result<usize> {
            let v = parse_number(source_name, line_no, tok)?;
            if v.fract() != 0.0 || v < 1.0 {
                return Err(Error::parse(
                    source_name,
                    line_no,
                    format!("invalid 1-based index {tok:?}"),
                ));
            }
            let idx = v as usize;
            if idx > neuron_count {
                return Err(Error::Inconsistent(format!(
                    "{source_name}:{line_no}: neuron index {idx} exceeds neuron count {neuron_count}"
                )));
            }
            Ok(idx - 1)
        };
        let i = index(fields[0])?;
        let j = index(fields[1])?;
        let w = parse_number(source_name, line_no, fields[2])?;
        if w > 0.0 && i != j {
            edges[[i, j]] = 1;
        }
    }
    GroundTruthNetwork::new(edges)
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| {
        Error::Io(std::io::Error::new(
            e.kind(),
            format!("{}: {e}", path.display()),
        ))
    })
}

/// Loads a recording with its layout and optional ground truth, checking that
/// all three agree on the neuron count.
pub fn load_dataset(
    fluorescence_path: &Path,
    positions_path: &Path,
    network_path: Option<&Path>,
    sample_rate_hz: f64,
) -> Result<Dataset> {
    let panel = parse_fluorescence(
        &read_text(fluorescence_path)?,
        sample_rate_hz,
        &fluorescence_path.display().to_string(),
    )?;
    let layout = parse_positions(
        &read_text(positions_path)?,
        &positions_path.display().to_string(),
    )?;
    if layout.neuron_count() != panel.neuron_count() {
        return Err(Error::Inconsistent(format!(
            "{} has {} neurons but {} lists {} positions",
            fluorescence_path.display(),
            panel.neuron_count(),
            positions_path.display(),
            layout.neuron_count()
        )));
    }
    let truth = match network_path {
        Some(p) => Some(parse_network(
            &read_text(p)?,
            panel.neuron_count(),
            &p.display().to_string(),
        )?),
        None => None,
    };
    Ok(Dataset {
        panel,
        layout,
        truth,
    })
}

/// File locations of one network inside a benchmark directory.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NetworkFiles {
    pub id: String,
    pub fluorescence: PathBuf,
    pub positions: PathBuf,
    pub network: Option<PathBuf>,
}

/// Finds networks in `dir` and its immediate subdirectories.
///
/// A network is a file named `fluorescence<suffix>` accompanied by
/// `networkPositions<suffix>` or `positions<suffix>`, and optionally
/// `network<suffix>`. Both the competition naming
/// (`fluorescence_iNet1_Size100_CC01inh.txt`) and the generator naming
/// (`fluorescence.csv`) match. Results are sorted by id.
pub fn discover_networks(dir: &Path) -> Result<Vec<NetworkFiles>> {
    let mut found = scan_dir(dir, None)?;
    let mut subdirs: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    subdirs.sort();
    for sub in subdirs {
        let name = sub.file_name().map(|n| n.to_string_lossy().into_owned());
        found.extend(scan_dir(&sub, name.as_deref())?);
    }
    found.sort_by(|a, b| a.id.cmp(&b.id));
    Ok(found)
}

fn scan_dir(dir: &Path, dir_label: Option<&str>) -> Result<Vec<NetworkFiles>> {
    let mut names: Vec<String> = fs::read_dir(dir)?
        .filter_map(|e| e.ok())
        .filter(|e| e.path().is_file())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .collect();
    names.sort();
    let mut out = Vec::new();
    for name in &names {
        let Some(suffix) = name.strip_prefix("fluorescence") else {
            continue;
        };
        let positions = ["networkPositions", "positions"]
            .iter()
            .map(|p| format!("{p}{suffix}"))
            .find(|cand| names.contains(cand));
        let Some(positions) = positions else {
            continue;
        };
        let network = Some(format!("network{suffix}")).filter(|cand| names.contains(cand));
        let stem = suffix
            .rsplit_once('.')
            .map_or(suffix, |(s, _)| s)
            .trim_start_matches(['_', '-']);
        let id = match (dir_label, stem.is_empty()) {
            (Some(d), true) => d.to_string(),
            (Some(d), false) => format!("{d}/{stem}"),
            (None, true) => "network".to_string(),
            (None, false) => stem.to_string(),
        };
        out.push(NetworkFiles {
            id,
            fluorescence: dir.join(name),
            positions: dir.join(positions),
            network: network.map(|n| dir.join(n)),
        });
    }
    Ok(out)
}

pub fn format_score_matrix(matrix: &ScoreMatrix) -> String {
    let mut out = String::new();
    for row in matrix.scores().rows() {
        let line: Vec<String> = row.iter().map(|v| format!("{v:.9}")).collect();
        out.push_str(&line.join(","));
        out.push('\n');
    }
    out
}

pub fn parse_score_matrix(text: &str, method_tag: &str, source_name: &str) -> Result<ScoreMatrix> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (line_no, line) in content_lines(text) {
        let row = split_fields(line)
            .map(|t| parse_number(source_name, line_no, t))
            .collect::<Result<Vec<_>>>()?;
        if let Some(first) = rows.first() {
            if first.len() != row.len() {
                return Err(Error::parse(
                    source_name,
                    line_no,
                    format!("expected {} columns, found {}", first.len(), row.len()),
                ));
            }
        }
        rows.push(row);
    }
    let n = rows.len();
    if rows.iter().any(|r| r.len() != n) {
        return Err(Error::Inconsistent(format!(
            "{source_name}: score matrix is not square"
        )));
    }
    let flat: Vec<f64> = rows.into_iter().flatten().collect();
    ScoreMatrix::new(
        Array2::from_shape_vec((n, n), flat).expect("square"),
        method_tag,
    )
}

/// Plain (P2) PGM with maxval 255; pixel = round(255 * score), so lower
/// scores are darker.
pub fn format_pgm(matrix: &ScoreMatrix) -> String {
    let n = matrix.neuron_count();
    let mut out = format!("P2\n{n} {n}\n255\n");
    for row in matrix.scores().rows() {
        let line: Vec<String> = row
            .iter()
            .map(|v| ((v * 255.0).round() as u8).to_string())
            .collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
    out
}

/// Writes `bytes` to a sibling temporary file and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let file_name = path
        .file_name()
        .ok_or_else(|| Error::invalid(format!("{} is not a file path", path.display())))?;
    let mut tmp_name = std::ffi::OsString::from(".");
    tmp_name.push(file_name);
    tmp_name.push(".tmp");
    let tmp = path.with_file_name(tmp_name);
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path).inspect_err(|_| {
        let _ = fs::remove_file(&tmp);
    })?;
    Ok(())
}

/// Path of the heatmap written next to a score file.
pub fn heatmap_path(score_path: &Path) -> PathBuf {
    score_path.with_extension("pgm")
}

/// Writes the score matrix and, when `heatmap` is set, a PGM next to it.
pub fn write_score_matrix(matrix: &ScoreMatrix, path: &Path, heatmap: bool) -> Result<()> {
    // Re-validate: a matrix assembled by hand may have bypassed the constructor checks.
    ScoreMatrix::new(matrix.scores().clone(), matrix.method_tag())?;
    write_atomic(path, format_score_matrix(matrix).as_bytes())?;
    if heatmap {
        write_atomic(&heatmap_path(path), format_pgm(matrix).as_bytes())?;
    }
    Ok(())
}

/// Human-readable table followed by `key=value` lines, one metric per line.
pub fn format_report(report: &EvalReport) -> String {
    let mut out = format_table(std::slice::from_ref(report));
    out.push('\n');
    let _ = writeln!(out, "method={}", report.method_tag);
    let _ = writeln!(out, "auc={:.9}", report.auc);
    let _ = writeln!(out, "prc={:.9}", report.prc);
    let _ = writeln!(out, "seconds={:.6}", report.wall_clock_seconds);
    let _ = writeln!(out, "folds={}", report.per_fold.len());
    for (k, f) in report.per_fold.iter().enumerate() {
        let _ = writeln!(out, "fold.{k}.network={}", f.network_id);
        let _ = writeln!(out, "fold.{k}.auc={:.9}", f.auc);
        let _ = writeln!(out, "fold.{k}.prc={:.9}", f.prc);
        let _ = writeln!(out, "fold.{k}.seconds={:.6}", f.seconds);
    }
    out
}

/// Table with `AUC %`, `PRC %` and `Time (Sec)` columns, then one
/// `method,auc,prc,seconds` line per report.
pub fn format_table(reports: &[EvalReport]) -> String {
    let width = reports
        .iter()
        .map(|r| r.method_tag.len())
        .chain(std::iter::once("Method".len()))
        .max()
        .unwrap_or(6);
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<width$}  {:>7}  {:>7}  {:>10}",
        "Method", "AUC %", "PRC %", "Time (Sec)"
    );
    for r in reports {
        let _ = writeln!(
            out,
            "{:<width$}  {:>7.1}  {:>7.1}  {:>10.1}",
            r.method_tag,
            100.0 * r.auc,
            100.0 * r.prc,
            r.wall_clock_seconds
        );
    }
    out.push('\n');
    out.push_str("method,auc,prc,seconds\n");
    for r in reports {
        out.push_str(&r.summary_line());
        out.push('\n');
    }
    out
}

pub fn write_report(report: &EvalReport, path: &Path) -> Result<()> {
    write_atomic(path, format_report(report).as_bytes())
}

/// Reads back the `key=value` section written by [`format_report`].
pub fn parse_report(text: &str) -> Result<EvalReport> {
    let mut kv = std::collections::HashMap::new();
    for (line_no, line) in content_lines(text) {
        if let Some((k, v)) = line.split_once('=') {
            kv.insert(k.trim().to_string(), (line_no, v.trim().to_string()));
        }
    }
    let get = |key: &str| -> Result<(usize, String)> {
        kv.get(key)
            .cloned()
            .ok_or_else(|| Error::parse("report", 0, format!("missing key {key}")))
    };
    let num = |key: &str| -> Result<f64> {
        let (line, v) = get(key)?;
        parse_number("report", line, &v)
    };
    let method = get("method")?.1;
    let folds = num("folds")? as usize;
    let per_fold = (0..folds)
        .map(|k| {
            Ok(FoldResult {
                network_id: get(&format!("fold.{k}.network"))?.1,
                auc: num(&format!("fold.{k}.auc"))?,
                prc: num(&format!("fold.{k}.prc"))?,
                seconds: num(&format!("fold.{k}.seconds"))?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    EvalReport::from_folds(method, per_fold)
}

pub fn format_fluorescence(panel: &FluorescencePanel) -> String {
    let mut out = String::with_capacity(panel.frames() * panel.neuron_count() * 13);
    for row in panel.values().rows() {
        for (k, v) in row.iter().enumerate() {
            if k > 0 {
                out.push(',');
            }
            let _ = write!(out, "{v:.9}");
        }
        out.push('\n');
    }
    out
}

pub fn format_positions(layout: &NeuronLayout) -> String {
    layout
        .positions()
        .iter()
        .map(|p| format!("{:.9},{:.9}\n", p[0], p[1]))
        .collect()
}

/// `i,j,1` rows (1-based) for every present edge, row-major order.
pub fn format_network(network: &GroundTruthNetwork) -> String {
    let mut out = String::new();
    for ((i, j), &e) in network.edges().indexed_iter() {
        if e == 1 {
            let _ = writeln!(out, "{},{},1", i + 1, j + 1);
        }
    }
    out
}
