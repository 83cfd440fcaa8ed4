use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use thiserror::Error;

use crate::graph::NodeId;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ReadingsError {
    #[error("readings have {rows} rows but {ids} meter ids")]
    ShapeMismatch { rows: usize, ids: usize },
    #[error("meter {0} appears twice")]
    DuplicateMeter(NodeId),
    #[error("meter {0} has no readings")]
    MissingMeter(NodeId),
    #[error("non-finite reading for meter {meter} at interval {interval}")]
    NonFinite { meter: NodeId, interval: usize },
    #[error("interval length must be positive, got {0} minutes")]
    BadInterval(f64),
}

/// Energy readings in watt-hours, one row per meter and one column per interval.
#[derive(Clone, Debug, PartialEq)]
pub struct ReadingsMatrix {
    values: Array2<f64>,
    node_order: Vec<NodeId>,
    interval_minutes: f64,
}

impl ReadingsMatrix {
    pub fn new(
        values: Array2<f64>,
        node_order: Vec<NodeId>,
        interval_minutes: f64,
    ) -> Result<Self, ReadingsError> {
        if values.nrows() != node_order.len() {
            return Err(ReadingsError::ShapeMismatch {
                rows: values.nrows(),
                ids: node_order.len(),
            });
        }
        if !(interval_minutes > 0.0 && interval_minutes.is_finite()) {
            return Err(ReadingsError::BadInterval(interval_minutes));
        }
        let mut sorted = node_order.clone();
        sorted.sort_unstable();
        if let Some(w) = sorted.windows(2).find(|w| w[0] == w[1]) {
            return Err(ReadingsError::DuplicateMeter(w[0]));
        }
        if let Some(((i, j), _)) = values.indexed_iter().find(|(_, v)| !v.is_finite()) {
            return Err(ReadingsError::NonFinite {
                meter: node_order[i],
                interval: j,
            });
        }
        Ok(Self {
            values,
            node_order,
            interval_minutes,
        })
    }

    /// Rows in `NodeId` order `0..n`.
    pub fn dense(values: Array2<f64>, interval_minutes: f64) -> Result<Self, ReadingsError> {
        let ids = (0..values.nrows()).map(NodeId).collect();
        Self::new(values, ids, interval_minutes)
    }

    pub fn values(&self) -> ArrayView2<'_, f64> {
        self.values.view()
    }

    pub fn into_values(self) -> Array2<f64> {
        self.values
    }

    pub fn node_order(&self) -> &[NodeId] {
        &self.node_order
    }

    pub fn interval_minutes(&self) -> f64 {
        self.interval_minutes
    }

    pub fn n_meters(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_samples(&self) -> usize {
        self.values.ncols()
    }

    pub fn row_of(&self, node: NodeId) -> Option<usize> {
        if self.node_order.get(node.0) == Some(&node) {
            return Some(node.0);
        }
        self.node_order.iter().position(|&m| m == node)
    }

    pub fn row(&self, node: NodeId) -> Option<ArrayView1<'_, f64>> {
        self.row_of(node).map(|r| self.values.row(r))
    }

    pub fn row_means(&self) -> Array1<f64> {
        self.values
            .mean_axis(Axis(1))
            .unwrap_or_else(|| Array1::zeros(self.n_meters()))
    }

    /// Copies the rows of `nodes`, in that order.
    pub fn select(&self, nodes: &[NodeId]) -> Result<Self, ReadingsError> {
        let rows = nodes
            .iter()
            .map(|&m| self.row_of(m).ok_or(ReadingsError::MissingMeter(m)))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self {
            values: self.values.select(Axis(0), &rows),
            node_order: nodes.to_vec(),
            interval_minutes: self.interval_minutes,
        })
    }

    /// Same meters, first `n` intervals only.
    pub fn truncated(&self, n: usize) -> Self {
        let n = n.min(self.n_samples());
        Self {
            values: self.values.slice(ndarray::s![.., ..n]).to_owned(),
            node_order: self.node_order.clone(),
            interval_minutes: self.interval_minutes,
        }
    }

    pub(crate) fn with_values(&self, values: Array2<f64>) -> Self {
        debug_assert_eq!(values.dim(), self.values.dim());
        Self {
            values,
            node_order: self.node_order.clone(),
            interval_minutes: self.interval_minutes,
        }
    }

    pub(crate) fn values_mut(&mut self) -> &mut Array2<f64> {
        &mut self.values
    }
}
