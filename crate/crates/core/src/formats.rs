//! On-disk formats. Schemas are described in `docs/formats.md`.
//!
//! Floats are written with Rust's shortest round-trip representation, so
//! every writer/reader pair here reproduces the in-memory values exactly.

use std::fmt::Write as _;
use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::str::FromStr;

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{GraphError, Layer, LayeredNetwork, NodeId, NodeLabel, Role};
use crate::ident::{LayerPairResult, TopologyResult, Warning};
use crate::noise::NoiseStats;
use crate::readings::{ReadingsError, ReadingsMatrix};
use crate::sim::{GroundTruth, NoiseConfig};

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("{path}: {source}")]
    Io { path: String, source: io::Error },
    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Readings(#[from] ReadingsError),
}

impl FormatError {
    fn parse(line: u64, message: impl Into<String>) -> Self {
        FormatError::Parse {
            line,
            message: message.into(),
        }
    }

    fn io(path: &Path, source: io::Error) -> Self {
        FormatError::Io {
            path: path.display().to_string(),
            source,
        }
    }
}

impl From<io::Error> for FormatError {
    fn from(source: io::Error) -> Self {
        FormatError::Io {
            path: "<stream>".into(),
            source,
        }
    }
}

impl From<csv::Error> for FormatError {
    fn from(e: csv::Error) -> Self {
        let line = e.position().map_or(0, |p| p.line());
        match e.into_kind() {
            csv::ErrorKind::Io(source) => FormatError::from(source),
            csv::ErrorKind::UnequalLengths {
                expected_len, len, ..
            } => FormatError::parse(line, format!("expected {expected_len} fields, found {len}")),
            other => FormatError::parse(line, format!("{other:?}")),
        }
    }
}

fn json_error(e: serde_json::Error) -> FormatError {
    FormatError::parse(e.line() as u64, e.to_string())
}

pub fn open(path: &Path) -> Result<BufReader<File>, FormatError> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| FormatError::io(path, e))
}

pub fn create(path: &Path) -> Result<BufWriter<File>, FormatError> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| FormatError::io(path, e))
}

// ---------------------------------------------------------------- topology

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct TopologyFile {
    nodes: Vec<NodeRecord>,
    #[serde(default)]
    edges: Vec<EdgeRecord>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct NodeRecord {
    id: NodeId,
    name: String,
    #[serde(default = "unspecified")]
    role: Role,
    layer: u32,
}

fn unspecified() -> Role {
    Role::Unspecified
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct EdgeRecord {
    parent: NodeId,
    child: NodeId,
}

pub fn write_topology<W: Write>(net: &LayeredNetwork, mut w: W) -> Result<(), FormatError> {
    let mut nodes: Vec<NodeRecord> = (0..net.node_count())
        .map(|i| {
            let id = NodeId(i);
            let label = net.label(id);
            NodeRecord {
                id,
                name: label.name.clone(),
                role: label.role,
                layer: net.level_of(id),
            }
        })
        .collect();
    nodes.sort_by_key(|n| n.id);
    let file = TopologyFile {
        nodes,
        edges: net
            .edges()
            .iter()
            .map(|&(parent, child)| EdgeRecord { parent, child })
            .collect(),
    };
    serde_json::to_writer_pretty(&mut w, &file).map_err(json_error)?;
    writeln!(w)?;
    Ok(())
}

/// Reads a topology file. `edges` may be empty (layer metadata only).
pub fn read_topology<R: Read>(r: R) -> Result<LayeredNetwork, FormatError> {
    let file: TopologyFile = serde_json::from_reader(r).map_err(json_error)?;
    let n = file.nodes.len();
    let mut labels = vec![None; n];
    let mut by_level = std::collections::BTreeMap::<u32, Vec<NodeId>>::new();
    for rec in file.nodes {
        let slot = labels
            .get_mut(rec.id.0)
            .ok_or(GraphError::UnknownNode(rec.id))?;
        if slot.is_some() {
            return Err(GraphError::BadLayerPartition(rec.id).into());
        }
        *slot = Some(NodeLabel::new(rec.name, rec.role));
        by_level.entry(rec.layer).or_default().push(rec.id);
    }
    if let Some(missing) = labels.iter().position(Option::is_none) {
        return Err(GraphError::BadLayerPartition(NodeId(missing)).into());
    }
    let labels = labels.into_iter().flatten().collect();
    let layers = by_level
        .into_iter()
        .map(|(level, members)| Layer::new(level, members))
        .collect();
    Ok(LayeredNetwork::new(
        labels,
        layers,
        file.edges.into_iter().map(|e| (e.parent, e.child)),
    )?)
}

// ---------------------------------------------------------------- readings

/// Layout of a readings file.
#[derive(Copy, Clone, Debug, Default, PartialEq, Eq)]
pub enum Orientation {
    /// Header of meter ids; one row per interval.
    #[default]
    Intervals,
    /// Header `meter,0,1,…`; one row per meter, id first.
    Meters,
}

impl FromStr for Orientation {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "intervals" | "rows-are-intervals" => Ok(Orientation::Intervals),
            "meters" | "rows-are-meters" => Ok(Orientation::Meters),
            _ => Err(format!("unknown orientation `{s}` (expected intervals or meters)")),
        }
    }
}

pub fn write_readings<W: Write>(
    z: &ReadingsMatrix,
    w: W,
    orientation: Orientation,
) -> Result<(), FormatError> {
    let mut out = csv::Writer::from_writer(w);
    let v = z.values();
    match orientation {
        Orientation::Intervals => {
            out.write_record(z.node_order().iter().map(|m| m.to_string()))?;
            for col in v.columns() {
                out.write_record(col.iter().map(|x| x.to_string()))?;
            }
        }
        Orientation::Meters => {
            out.write_record(
                std::iter::once("meter".to_string()).chain((0..z.n_samples()).map(|j| j.to_string())),
            )?;
            for (m, row) in z.node_order().iter().zip(v.rows()) {
                out.write_record(
                    std::iter::once(m.to_string()).chain(row.iter().map(|x| x.to_string())),
                )?;
            }
        }
    }
    out.flush()?;
    Ok(())
}

fn parse_id(s: &str, line: u64) -> Result<NodeId, FormatError> {
    s.parse::<usize>()
        .map(NodeId)
        .map_err(|_| FormatError::parse(line, format!("`{s}` is not a meter id")))
}

fn parse_value(s: &str, line: u64) -> Result<f64, FormatError> {
    match s.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        _ => Err(FormatError::parse(line, format!("`{s}` is not a finite reading"))),
    }
}

pub fn read_readings<R: Read>(
    r: R,
    orientation: Orientation,
    interval_minutes: f64,
) -> Result<ReadingsMatrix, FormatError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(r);
    let header = rdr.headers()?.clone();
    if header.is_empty() || (header.len() == 1 && header[0].is_empty()) {
        return Err(FormatError::parse(1, "missing header row"));
    }
    let header_line = header.position().map_or(1, |p| p.line());

    match orientation {
        Orientation::Intervals => {
            let ids = header
                .iter()
                .map(|s| parse_id(s, header_line))
                .collect::<Result<Vec<_>, _>>()?;
            let mut columns: Vec<Vec<f64>> = vec![Vec::new(); ids.len()];
            for rec in rdr.records() {
                let rec = rec?;
                let line = rec.position().map_or(0, |p| p.line());
                for (col, s) in columns.iter_mut().zip(rec.iter()) {
                    col.push(parse_value(s, line)?);
                }
            }
            let samples = columns.first().map_or(0, Vec::len);
            if samples == 0 {
                return Err(FormatError::parse(header_line + 1, "no readings after header"));
            }
            let values = Array2::from_shape_fn((ids.len(), samples), |(i, j)| columns[i][j]);
            Ok(ReadingsMatrix::new(values, ids, interval_minutes)?)
        }
        Orientation::Meters => {
            let samples = header.len() - 1;
            if samples == 0 {
                return Err(FormatError::parse(header_line, "no interval columns"));
            }
            let mut ids = Vec::new();
            let mut flat = Vec::new();
            for rec in rdr.records() {
                let rec = rec?;
                let line = rec.position().map_or(0, |p| p.line());
                ids.push(parse_id(&rec[0], line)?);
                for s in rec.iter().skip(1) {
                    flat.push(parse_value(s, line)?);
                }
            }
            if ids.is_empty() {
                return Err(FormatError::parse(header_line + 1, "no meters after header"));
            }
            let values = Array2::from_shape_vec((ids.len(), samples), flat)
                .expect("csv enforces equal record lengths");
            Ok(ReadingsMatrix::new(values, ids, interval_minutes)?)
        }
    }
}

// ---------------------------------------------------------- noise manifest

/// Per-pair loss record. `per_interval` is empty for estimator dumps.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairLossRecord {
    pub parent_level: u32,
    pub mu_t: f64,
    pub var_lt: f64,
    #[serde(default)]
    pub per_interval: Vec<f64>,
}

/// Injected parameters of a generated bundle, or estimates of one run. The
/// per-node vectors in `stats` follow `node_order`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseManifest {
    pub seed: Option<u64>,
    pub config: Option<NoiseConfig>,
    pub node_order: Vec<NodeId>,
    #[serde(flatten)]
    pub stats: NoiseStats,
    pub layer_pairs: Vec<PairLossRecord>,
}

fn mean_var(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    (mean, xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n)
}

impl NoiseManifest {
    pub fn injected(gt: &GroundTruth, seed: u64) -> Self {
        Self {
            seed: Some(seed),
            config: gt.injected.config.clone(),
            node_order: (0..gt.network.node_count()).map(NodeId).collect(),
            stats: gt.injected.stats.clone(),
            layer_pairs: gt
                .injected
                .pair_losses
                .iter()
                .map(|p| {
                    let (mu_t, var_lt) = mean_var(&p.per_interval);
                    PairLossRecord {
                        parent_level: p.parent_level,
                        mu_t,
                        var_lt,
                        per_interval: p.per_interval.clone(),
                    }
                })
                .collect(),
        }
    }

    /// Estimates of one layer pair, rows ordered parents then children.
    pub fn estimated(pair: &LayerPairResult, cfg: &NoiseConfig) -> Self {
        Self {
            seed: None,
            config: Some(cfg.clone()),
            node_order: pair.parents.iter().chain(&pair.children).copied().collect(),
            stats: pair.noise.clone(),
            layer_pairs: vec![PairLossRecord {
                parent_level: pair.parent_level,
                mu_t: pair.noise.mu_t,
                var_lt: pair.noise.var_lt,
                per_interval: Vec::new(),
            }],
        }
    }
}

pub fn write_manifest<W: Write>(m: &NoiseManifest, mut w: W) -> Result<(), FormatError> {
    serde_json::to_writer_pretty(&mut w, m).map_err(json_error)?;
    writeln!(w)?;
    Ok(())
}

pub fn read_manifest<R: Read>(r: R) -> Result<NoiseManifest, FormatError> {
    serde_json::from_reader(r).map_err(json_error)
}

// ------------------------------------------------------------- diagnostics

/// One row of the diagnostics file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsRow {
    pub parent_level: u32,
    pub status: String,
    pub n_rows: usize,
    pub n_samples: usize,
    pub spectral_gap: f64,
    pub condition_number: f64,
    pub min_margin: f64,
    pub max_deviation: f64,
    pub seconds: f64,
    pub warnings: String,
    pub error: String,
}

fn describe_warning(w: &Warning) -> String {
    match w {
        Warning::AmbiguousRounding { child } => format!("ambiguous-rounding:{child}"),
        Warning::MinimalSamples { samples } => format!("minimal-samples:{samples}"),
    }
}

pub fn diagnostics_rows(result: &TopologyResult) -> Vec<DiagnosticsRow> {
    result
        .pairs
        .iter()
        .map(|r| match r {
            Ok(p) => {
                let d = &p.diagnostics;
                DiagnosticsRow {
                    parent_level: p.parent_level,
                    status: "ok".into(),
                    n_rows: d.n_rows,
                    n_samples: d.n_samples,
                    spectral_gap: d.spectral_gap,
                    condition_number: d.dependent_condition,
                    min_margin: d.min_margin,
                    max_deviation: d.max_deviation,
                    seconds: d.elapsed.as_secs_f64(),
                    warnings: d
                        .warnings
                        .iter()
                        .map(describe_warning)
                        .collect::<Vec<_>>()
                        .join(";"),
                    error: String::new(),
                }
            }
            Err(f) => DiagnosticsRow {
                parent_level: f.parent_level,
                status: "failed".into(),
                n_rows: 0,
                n_samples: 0,
                spectral_gap: f64::NAN,
                condition_number: f64::NAN,
                min_margin: f64::NAN,
                max_deviation: f64::NAN,
                seconds: 0.0,
                warnings: String::new(),
                error: f.error.to_string(),
            },
        })
        .collect()
}

pub fn write_csv_rows<W: Write, T: Serialize>(rows: &[T], w: W) -> Result<(), FormatError> {
    let mut out = csv::Writer::from_writer(w);
    for row in rows {
        out.serialize(row)?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_csv_rows<R: Read, T: for<'de> Deserialize<'de>>(r: R) -> Result<Vec<T>, FormatError> {
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_reader(r);
    rdr.deserialize().map(|r| r.map_err(FormatError::from)).collect()
}

/// Singular values of each identified pair, largest first.
pub fn write_spectrum<W: Write>(result: &TopologyResult, w: W) -> Result<(), FormatError> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["parent_level", "index", "singular_value"])?;
    for p in result.successes() {
        for (k, s) in p.singular_values.iter().enumerate() {
            out.write_record([p.parent_level.to_string(), k.to_string(), s.to_string()])?;
        }
    }
    out.flush()?;
    Ok(())
}

// -------------------------------------------------------- benchmark report

/// Aggregate of all trials at one sample-count multiplier.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub multiplier: f64,
    pub trials: usize,
    pub successes: usize,
    pub success_pct: f64,
    pub mean_samples: f64,
    pub mean_seconds: f64,
    pub mean_accuracy: f64,
    pub failed_trials: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub multiplier: f64,
    pub trial: usize,
    pub seed: u64,
    pub n_nodes: usize,
    pub n_samples: usize,
    pub success: bool,
    pub accuracy: f64,
    pub seconds: f64,
    pub error: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchmarkReport {
    /// Hardware and thread-count descriptor; absolute times depend on it.
    pub environment: String,
    pub scenario: String,
    pub seed: u64,
    pub cells: Vec<CellSummary>,
    pub trials: Vec<TrialRecord>,
}

const ENV_TAG: &str = "# environment: ";
const SCENARIO_TAG: &str = "# scenario: ";
const SEED_TAG: &str = "# seed: ";

fn write_tagged<W: Write, T: Serialize>(
    report: &BenchmarkReport,
    rows: &[T],
    mut w: W,
) -> Result<(), FormatError> {
    writeln!(w, "{ENV_TAG}{}", report.environment.replace('\n', " "))?;
    writeln!(w, "{SCENARIO_TAG}{}", report.scenario.replace('\n', " "))?;
    writeln!(w, "{SEED_TAG}{}", report.seed)?;
    write_csv_rows(rows, w)
}

/// Per-cell table with a three-line `#` preamble.
pub fn write_report<W: Write>(report: &BenchmarkReport, w: W) -> Result<(), FormatError> {
    write_tagged(report, &report.cells, w)
}

/// Per-trial table with the same preamble.
pub fn write_trials<W: Write>(report: &BenchmarkReport, w: W) -> Result<(), FormatError> {
    write_tagged(report, &report.trials, w)
}

struct Preamble {
    environment: String,
    scenario: String,
    seed: u64,
}

fn read_preamble(text: &str) -> Result<Preamble, FormatError> {
    let mut lines = text.lines();
    let mut take = |tag: &str, line: u64| {
        lines
            .next()
            .and_then(|l| l.strip_prefix(tag))
            .map(str::to_string)
            .ok_or_else(|| FormatError::parse(line, format!("expected `{}` line", tag.trim())))
    };
    let environment = take(ENV_TAG, 1)?;
    let scenario = take(SCENARIO_TAG, 2)?;
    let seed = take(SEED_TAG, 3)?
        .trim()
        .parse()
        .map_err(|_| FormatError::parse(3, "seed is not an integer"))?;
    Ok(Preamble {
        environment,
        scenario,
        seed,
    })
}

/// Reads a report written by [`write_report`] and, optionally, the matching
/// trials file.
pub fn read_report<R: Read>(mut cells: R, trials: Option<R>) -> Result<BenchmarkReport, FormatError> {
    let mut text = String::new();
    cells.read_to_string(&mut text)?;
    let pre = read_preamble(&text)?;
    let cell_rows = read_csv_rows(text.as_bytes())?;
    let trial_rows = match trials {
        Some(mut t) => {
            let mut text = String::new();
            t.read_to_string(&mut text)?;
            read_preamble(&text)?;
            read_csv_rows(text.as_bytes())?
        }
        None => Vec::new(),
    };
    Ok(BenchmarkReport {
        environment: pre.environment,
        scenario: pre.scenario,
        seed: pre.seed,
        cells: cell_rows,
        trials: trial_rows,
    })
}

/// Human-readable table of the per-cell results.
pub fn summary(report: &BenchmarkReport) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "scenario:    {}", report.scenario);
    let _ = writeln!(s, "seed:        {}", report.seed);
    let _ = writeln!(s, "environment: {}", report.environment);
    let _ = writeln!(s);
    let _ = writeln!(
        s,
        "{:>10} {:>7} {:>10} {:>10} {:>12} {:>10}",
        "N / base", "trials", "success %", "mean N", "mean time s", "accuracy"
    );
    for c in &report.cells {
        let _ = writeln!(
            s,
            "{:>10} {:>7} {:>10.1} {:>10.1} {:>12.4} {:>10.4}",
            format!("{}x", c.multiplier),
            c.trials,
            c.success_pct,
            c.mean_samples,
            c.mean_seconds,
            c.mean_accuracy
        );
    }
    s
}
