//! Phase and layered topology identification.
//!
//! Each pair of consecutive layers is an independent subproblem: the parent
//! rows are the dependent variables, the child rows the independent ones, and
//! the regression matrix recovered by whitened PCA should equal `−A_d`, the
//! negated parent block of the pair's incidence matrix. Rounding each column
//! to its entry closest to 1 assigns every child exactly one parent.

use std::time::{Duration, Instant};

use ndarray::{Array2, ArrayView2};
use thiserror::Error;

use crate::graph::{GraphError, Layer, LayeredNetwork, NodeId, NodeLabel, Role};
use crate::noise::{self, NoiseError, NoiseStats};
use crate::pca::{PcaError, PcaModel};
use crate::readings::ReadingsMatrix;
use crate::sim::NoiseConfig;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum IdentError {
    #[error("no readings for meter {0}")]
    MissingReadings(NodeId),
    #[error("a layer pair needs at least one parent and one child")]
    EmptyLayer,
    #[error("need at least two layers, got {0}")]
    TooFewLayers(usize),
    #[error("{samples} samples for {variables} meters; need at least as many samples as meters")]
    InsufficientSamples { samples: usize, variables: usize },
    #[error(transparent)]
    Pca(PcaError),
    #[error(transparent)]
    Noise(#[from] NoiseError),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

impl From<PcaError> for IdentError {
    fn from(e: PcaError) -> Self {
        match e {
            PcaError::InsufficientSamples { samples, variables } => {
                IdentError::InsufficientSamples { samples, variables }
            }
            other => IdentError::Pca(other),
        }
    }
}

/// Non-fatal findings attached to a layer pair.
#[derive(Clone, Debug, PartialEq)]
pub enum Warning {
    /// Two parents were equally close to 1; the lower index won.
    AmbiguousRounding { child: NodeId },
    /// Exactly as many samples as meters: the fit has no residual degrees of freedom.
    MinimalSamples { samples: usize },
}

/// Column-wise rounding of a regression matrix to a 0/1 assignment.
#[derive(Clone, Debug, PartialEq)]
pub struct Rounding {
    pub matrix: Array2<u8>,
    /// Row chosen for each column.
    pub chosen: Vec<usize>,
    /// `|runner-up − 1| − |winner − 1|` per column; infinite with one row.
    pub margins: Vec<f64>,
    /// Largest `|R̂ − rounded|` per column.
    pub max_deviation: Vec<f64>,
    /// Columns where the winner was decided by the tie-break.
    pub ambiguous: Vec<usize>,
}

/// In every column the entry closest to 1 becomes 1 and the rest 0; ties go
/// to the lowest row index.
pub fn round_regression(r_hat: ArrayView2<'_, f64>) -> Rounding {
    let (p, m) = r_hat.dim();
    let mut matrix = Array2::<u8>::zeros((p, m));
    let mut chosen = Vec::with_capacity(m);
    let mut margins = Vec::with_capacity(m);
    let mut max_deviation = Vec::with_capacity(m);
    let mut ambiguous = Vec::new();

    for (j, col) in r_hat.columns().into_iter().enumerate() {
        let mut best = (f64::INFINITY, 0usize);
        let mut second = f64::INFINITY;
        for (i, &v) in col.iter().enumerate() {
            let d = (v - 1.0).abs();
            if d < best.0 {
                second = best.0;
                best = (d, i);
            } else if d < second {
                second = d;
            }
        }
        if p == 0 {
            margins.push(f64::NAN);
            max_deviation.push(f64::NAN);
            chosen.push(0);
            continue;
        }
        let winner = best.1;
        matrix[[winner, j]] = 1;
        chosen.push(winner);
        let margin = second - best.0;
        if margin == 0.0 {
            ambiguous.push(j);
        }
        margins.push(margin);
        max_deviation.push(
            col.iter()
                .enumerate()
                .map(|(i, &v)| (v - if i == winner { 1.0 } else { 0.0 }).abs())
                .fold(0.0, f64::max),
        );
    }

    Rounding {
        matrix,
        chosen,
        margins,
        max_deviation,
        ambiguous,
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PairDiagnostics {
    pub n_rows: usize,
    pub n_samples: usize,
    /// Smallest retained over largest discarded singular value.
    pub spectral_gap: f64,
    pub dependent_condition: f64,
    pub min_margin: f64,
    pub max_deviation: f64,
    pub elapsed: Duration,
    pub warnings: Vec<Warning>,
}

/// Outcome of one parent/child layer pair.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerPairResult {
    pub parent_level: u32,
    pub parents: Vec<NodeId>,
    pub children: Vec<NodeId>,
    pub raw_regression: Array2<f64>,
    pub rounded_regression: Array2<u8>,
    pub inferred_edges: Vec<(NodeId, NodeId)>,
    pub noise: NoiseStats,
    pub singular_values: Vec<f64>,
    pub diagnostics: PairDiagnostics,
}

/// Phase identification: three (or any number of) parent meters over their
/// consumers. Equivalent to one layer pair of [`identify_topology`].
pub fn identify_phase(
    z: &ReadingsMatrix,
    parents: &[NodeId],
    children: &[NodeId],
    cfg: &NoiseConfig,
) -> Result<LayerPairResult, IdentError> {
    identify_pair(z, 2, parents, children, cfg)
}

fn identify_pair(
    z: &ReadingsMatrix,
    parent_level: u32,
    parents: &[NodeId],
    children: &[NodeId],
    cfg: &NoiseConfig,
) -> Result<LayerPairResult, IdentError> {
    let start = Instant::now();
    if parents.is_empty() || children.is_empty() {
        return Err(IdentError::EmptyLayer);
    }
    let mut parents = parents.to_vec();
    let mut children = children.to_vec();
    parents.sort_unstable();
    children.sort_unstable();

    let rows: Vec<NodeId> = parents.iter().chain(&children).copied().collect();
    let sub = z
        .select(&rows)
        .map_err(|_| IdentError::MissingReadings(first_missing(z, &rows)))?;
    let (n, samples) = (sub.n_meters(), sub.n_samples());
    if samples < n {
        return Err(IdentError::InsufficientSamples {
            samples,
            variables: n,
        });
    }
    let mut warnings = Vec::new();
    if samples == n {
        warnings.push(Warning::MinimalSamples { samples });
    }

    let p = parents.len();
    let dependent: Vec<usize> = (0..p).collect();
    let independent: Vec<usize> = (p..n).collect();
    let pre = noise::preprocess(
        sub.values(),
        &dependent,
        &independent,
        cfg.accuracy_class_pct,
        cfg.interval_minutes,
    )?;
    let model = PcaModel::identify(pre.separated.view(), &pre.covariance, &dependent, &independent)?;
    let rounding = round_regression(model.regression_matrix.view());

    let inferred_edges: Vec<(NodeId, NodeId)> = rounding
        .chosen
        .iter()
        .zip(&children)
        .map(|(&row, &child)| (parents[row], child))
        .collect();
    warnings.extend(
        rounding
            .ambiguous
            .iter()
            .map(|&j| Warning::AmbiguousRounding { child: children[j] }),
    );

    let diagnostics = PairDiagnostics {
        n_rows: n,
        n_samples: samples,
        spectral_gap: model.spectral_gap,
        dependent_condition: model.dependent_condition,
        min_margin: rounding.margins.iter().copied().fold(f64::INFINITY, f64::min),
        max_deviation: rounding.max_deviation.iter().copied().fold(0.0, f64::max),
        elapsed: start.elapsed(),
        warnings,
    };
    Ok(LayerPairResult {
        parent_level,
        parents,
        children,
        raw_regression: model.regression_matrix,
        rounded_regression: rounding.matrix,
        inferred_edges,
        noise: pre.stats,
        singular_values: model.singular_values,
        diagnostics,
    })
}

fn first_missing(z: &ReadingsMatrix, rows: &[NodeId]) -> NodeId {
    rows.iter()
        .copied()
        .find(|&m| z.row_of(m).is_none())
        .unwrap_or_default()
}

/// A layer pair that could not be identified.
#[derive(Clone, Debug, PartialEq)]
pub struct PairFailure {
    pub parent_level: u32,
    pub error: IdentError,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TopologyResult {
    /// One entry per consecutive pair, lowest first.
    pub pairs: Vec<Result<LayerPairResult, PairFailure>>,
    /// Every successfully inferred edge; nodes of failed pairs stay orphaned.
    pub network: LayeredNetwork,
    pub elapsed: Duration,
}

impl TopologyResult {
    pub fn is_complete(&self) -> bool {
        self.pairs.iter().all(Result::is_ok)
    }

    pub fn failures(&self) -> impl Iterator<Item = &PairFailure> {
        self.pairs.iter().filter_map(|r| r.as_ref().err())
    }

    pub fn successes(&self) -> impl Iterator<Item = &LayerPairResult> {
        self.pairs.iter().filter_map(|r| r.as_ref().ok())
    }
}

/// Runs the pair pipeline on every consecutive layer pair `(l + 1, l)` and
/// assembles the inferred forest. A failing pair does not stop the others.
pub fn identify_topology(
    z: &ReadingsMatrix,
    layers: &[Layer],
    cfg: &NoiseConfig,
) -> Result<TopologyResult, IdentError> {
    let start = Instant::now();
    let mut layers = layers.to_vec();
    layers.sort_by_key(|l| l.level);
    if layers.len() < 2 {
        return Err(IdentError::TooFewLayers(layers.len()));
    }
    for m in layers.iter().flat_map(|l| &l.members) {
        if z.row_of(*m).is_none() {
            return Err(IdentError::MissingReadings(*m));
        }
    }

    let pairs: Vec<Result<LayerPairResult, PairFailure>> = layers
        .windows(2)
        .map(|w| {
            let (child, parent) = (&w[0], &w[1]);
            identify_pair(z, parent.level, &parent.members, &child.members, cfg).map_err(
                |error| PairFailure {
                    parent_level: parent.level,
                    error,
                },
            )
        })
        .collect();

    let n = layers.iter().map(Layer::len).sum();
    let labels = (0..n)
        .map(|i| NodeLabel::new(i.to_string(), Role::Unspecified))
        .collect();
    let edges = pairs
        .iter()
        .filter_map(|r| r.as_ref().ok())
        .flat_map(|r| r.inferred_edges.iter().copied());
    let network = LayeredNetwork::new(labels, layers, edges)?;

    Ok(TopologyResult {
        pairs,
        network,
        elapsed: start.elapsed(),
    })
}

#[derive(Copy, Clone, Debug, PartialEq)]
pub struct Score {
    /// Inferred edge set equals the true one.
    pub success: bool,
    /// Fraction of non-top nodes assigned their true parent.
    pub accuracy: f64,
}

pub fn score_network(inferred: &LayeredNetwork, truth: &LayeredNetwork) -> Result<Score, GraphError> {
    if inferred.node_count() != truth.node_count() || inferred.layers() != truth.layers() {
        return Err(GraphError::NodeSetMismatch);
    }
    let top = truth.top_level();
    let mut total = 0usize;
    let mut correct = 0usize;
    for layer in truth.layers().iter().filter(|l| l.level < top) {
        for &m in &layer.members {
            total += 1;
            if inferred.parent(m).is_some() && inferred.parent(m) == truth.parent(m) {
                correct += 1;
            }
        }
    }
    Ok(Score {
        success: inferred.edges() == truth.edges(),
        accuracy: if total == 0 {
            1.0
        } else {
            correct as f64 / total as f64
        },
    })
}

pub fn score(inferred: &TopologyResult, truth: &LayeredNetwork) -> Result<Score, GraphError> {
    score_network(&inferred.network, truth)
}
