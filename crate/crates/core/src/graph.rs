//! Layered directed forests of meters and their incidence matrices.
//!
//! A distribution network is modelled as a forest whose nodes are meters
//! grouped into voltage layers. Level 1 holds the consumers; every edge runs
//! from a node at level `l + 1` to its child at level `l`. Restricted to any
//! two consecutive layers the graph is a forest of depth-1 trees, which is the
//! unit the identification pipeline works on.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Dense 0-based meter index. Row `i` of every readings matrix is `NodeId(i)`.
#[derive(
    Copy, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize, Default,
)]
#[serde(transparent)]
pub struct NodeId(pub usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// What a meter measures.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Role {
    Substation,
    Feeder,
    TransformerPhase,
    Consumer,
    Unspecified,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::Substation => "substation",
            Role::Feeder => "feeder",
            Role::TransformerPhase => "transformer-phase",
            Role::Consumer => "consumer",
            Role::Unspecified => "unspecified",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeLabel {
    pub name: String,
    pub role: Role,
}

impl NodeLabel {
    pub fn new(name: impl Into<String>, role: Role) -> Self {
        Self {
            name: name.into(),
            role,
        }
    }
}

/// One voltage level. Members are kept sorted by id.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Layer {
    pub level: u32,
    pub members: Vec<NodeId>,
}

impl Layer {
    pub fn new(level: u32, mut members: Vec<NodeId>) -> Self {
        members.sort_unstable();
        members.dedup();
        Self { level, members }
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GraphError {
    #[error("layers {parent} and {child} are not consecutive (parent must be child + 1)")]
    NonConsecutiveLayers { parent: u32, child: u32 },
    #[error("no layer at level {0}")]
    UnknownLayer(u32),
    #[error("node {0} has no parent in the layer above")]
    OrphanChild(NodeId),
    #[error("incidence matrix has no parent rows")]
    EmptyParentSet,
    #[error("incidence column {column} is malformed: {reason}")]
    MalformedColumn { column: usize, reason: String },
    #[error("node sets or layer partitions differ")]
    NodeSetMismatch,
    #[error("node {0} appears in more than one layer or is out of range")]
    BadLayerPartition(NodeId),
    #[error("layer levels must be 1..=L without gaps, found {0:?}")]
    BadLevels(Vec<u32>),
    #[error("edge {parent} -> {child} does not join consecutive layers")]
    EdgeSkipsLayer { parent: NodeId, child: NodeId },
    #[error("self-loop on node {0}")]
    SelfLoop(NodeId),
    #[error("node {child} has two parents ({first} and {second})")]
    MultipleParents {
        child: NodeId,
        first: NodeId,
        second: NodeId,
    },
    #[error("edge references unknown node {0}")]
    UnknownNode(NodeId),
}

/// A directed forest of meters partitioned into voltage layers.
///
/// Construction guarantees: layers partition `0..n`, levels are `1..=L`,
/// every edge joins level `l + 1` to level `l`, and no node has two parents.
/// A node below the top layer may still lack a parent (see [`Self::is_complete`]).
#[derive(Clone, Debug, PartialEq)]
pub struct LayeredNetwork {
    labels: Vec<NodeLabel>,
    layers: Vec<Layer>,
    edges: BTreeSet<(NodeId, NodeId)>,
    parent_of: Vec<Option<NodeId>>,
    level_of: Vec<u32>,
}

impl LayeredNetwork {
    pub fn new(
        labels: Vec<NodeLabel>,
        mut layers: Vec<Layer>,
        edges: impl IntoIterator<Item = (NodeId, NodeId)>,
    ) -> Result<Self, GraphError> {
        let n = labels.len();
        layers.sort_by_key(|l| l.level);
        let levels: Vec<u32> = layers.iter().map(|l| l.level).collect();
        if levels.iter().enumerate().any(|(i, &lv)| lv != i as u32 + 1) {
            return Err(GraphError::BadLevels(levels));
        }

        let mut level_of = vec![0u32; n];
        for layer in &mut layers {
            layer.members.sort_unstable();
            for &m in &layer.members {
                if m.0 >= n || level_of[m.0] != 0 {
                    return Err(GraphError::BadLayerPartition(m));
                }
                level_of[m.0] = layer.level;
            }
        }
        if let Some(i) = level_of.iter().position(|&lv| lv == 0) {
            return Err(GraphError::BadLayerPartition(NodeId(i)));
        }

        let mut parent_of = vec![None; n];
        let mut edge_set = BTreeSet::new();
        for (parent, child) in edges {
            if parent.0 >= n {
                return Err(GraphError::UnknownNode(parent));
            }
            if child.0 >= n {
                return Err(GraphError::UnknownNode(child));
            }
            if parent == child {
                return Err(GraphError::SelfLoop(parent));
            }
            if level_of[parent.0] != level_of[child.0] + 1 {
                return Err(GraphError::EdgeSkipsLayer { parent, child });
            }
            match parent_of[child.0] {
                Some(first) if first != parent => {
                    return Err(GraphError::MultipleParents {
                        child,
                        first,
                        second: parent,
                    })
                }
                _ => parent_of[child.0] = Some(parent),
            }
            edge_set.insert((parent, child));
        }

        Ok(Self {
            labels,
            layers,
            edges: edge_set,
            parent_of,
            level_of,
        })
    }

    /// Same nodes and layers, different edge set.
    pub fn with_edges(
        &self,
        edges: impl IntoIterator<Item = (NodeId, NodeId)>,
    ) -> Result<Self, GraphError> {
        Self::new(self.labels.clone(), self.layers.clone(), edges)
    }

    pub fn node_count(&self) -> usize {
        self.labels.len()
    }

    pub fn labels(&self) -> &[NodeLabel] {
        &self.labels
    }

    pub fn label(&self, node: NodeId) -> &NodeLabel {
        &self.labels[node.0]
    }

    /// Layers ordered from level 1 (consumers) upwards.
    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layer(&self, level: u32) -> Option<&Layer> {
        level
            .checked_sub(1)
            .and_then(|i| self.layers.get(i as usize))
    }

    pub fn top_level(&self) -> u32 {
        self.layers.len() as u32
    }

    pub fn level_of(&self, node: NodeId) -> u32 {
        self.level_of[node.0]
    }

    pub fn edges(&self) -> &BTreeSet<(NodeId, NodeId)> {
        &self.edges
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn parent(&self, node: NodeId) -> Option<NodeId> {
        self.parent_of[node.0]
    }

    pub fn children(&self, node: NodeId) -> impl Iterator<Item = NodeId> + '_ {
        self.edges
            .range((node, NodeId(0))..=(node, NodeId(usize::MAX)))
            .map(|&(_, c)| c)
    }

    /// Children grouped by parent, every parent of the given layer present.
    pub fn children_by_parent(&self, parent_level: u32) -> BTreeMap<NodeId, Vec<NodeId>> {
        let mut out: BTreeMap<NodeId, Vec<NodeId>> = self
            .layer(parent_level)
            .map(|l| l.members.iter().map(|&m| (m, Vec::new())).collect())
            .unwrap_or_default();
        for &(p, c) in &self.edges {
            if self.level_of[p.0] == parent_level {
                out.entry(p).or_default().push(c);
            }
        }
        out
    }

    /// True when every node below the top layer has a parent.
    pub fn is_complete(&self) -> bool {
        let top = self.top_level();
        self.parent_of
            .iter()
            .zip(&self.level_of)
            .all(|(p, &lv)| lv == top || p.is_some())
    }

    fn same_partition(&self, other: &Self) -> bool {
        self.node_count() == other.node_count() && self.layers == other.layers
    }
}

/// Signed node-by-edge matrix of one parent/child layer pair.
///
/// Column `j` has `-1` at the row of the parent the edge leaves and `+1` at
/// the row of the child it enters.
#[derive(Clone, Debug, PartialEq)]
pub struct IncidenceMatrix {
    entries: Array2<i8>,
    node_order: Vec<NodeId>,
    edge_order: Vec<(NodeId, NodeId)>,
    parent_rows: Vec<usize>,
    child_rows: Vec<usize>,
}

impl IncidenceMatrix {
    /// Validates an externally supplied matrix. Every column must hold one
    /// `-1` in a parent row, one `+1` in a child row and zeros elsewhere.
    pub fn from_parts(
        entries: Array2<i8>,
        node_order: Vec<NodeId>,
        parent_rows: Vec<usize>,
        child_rows: Vec<usize>,
    ) -> Result<Self, GraphError> {
        let n = entries.nrows();
        if node_order.len() != n {
            return Err(GraphError::NodeSetMismatch);
        }
        let mut seen = vec![0u8; n];
        for &r in parent_rows.iter().chain(&child_rows) {
            if r >= n {
                return Err(GraphError::NodeSetMismatch);
            }
            seen[r] += 1;
        }
        if seen.iter().any(|&c| c != 1) {
            return Err(GraphError::NodeSetMismatch);
        }
        let is_parent: Vec<bool> = (0..n).map(|r| parent_rows.contains(&r)).collect();

        let mut edge_order = Vec::with_capacity(entries.ncols());
        for (j, col) in entries.columns().into_iter().enumerate() {
            let mut from = None;
            let mut to = None;
            for (i, &v) in col.iter().enumerate() {
                let slot = match v {
                    0 => continue,
                    -1 => &mut from,
                    1 => &mut to,
                    other => {
                        return Err(GraphError::MalformedColumn {
                            column: j,
                            reason: format!("entry {other} at row {i}"),
                        })
                    }
                };
                if slot.replace(i).is_some() {
                    return Err(GraphError::MalformedColumn {
                        column: j,
                        reason: format!("repeated {v} entry"),
                    });
                }
            }
            let (Some(from), Some(to)) = (from, to) else {
                return Err(GraphError::MalformedColumn {
                    column: j,
                    reason: "needs exactly one -1 and one +1".into(),
                });
            };
            if !is_parent[from] || is_parent[to] {
                return Err(GraphError::MalformedColumn {
                    column: j,
                    reason: "edge must leave a parent row and enter a child row".into(),
                });
            }
            edge_order.push((node_order[from], node_order[to]));
        }

        Ok(Self {
            entries,
            node_order,
            edge_order,
            parent_rows,
            child_rows,
        })
    }

    pub fn entries(&self) -> ArrayView2<'_, i8> {
        self.entries.view()
    }

    pub fn node_order(&self) -> &[NodeId] {
        &self.node_order
    }

    pub fn edge_order(&self) -> &[(NodeId, NodeId)] {
        &self.edge_order
    }

    pub fn parent_rows(&self) -> &[usize] {
        &self.parent_rows
    }

    pub fn child_rows(&self) -> &[usize] {
        &self.child_rows
    }

    /// Columns reordered by `(child, parent)`; equal matrices up to column
    /// permutation have equal canonical forms.
    pub fn canonical_columns(&self) -> Array2<i8> {
        let mut order: Vec<usize> = (0..self.edge_order.len()).collect();
        order.sort_by_key(|&j| (self.edge_order[j].1, self.edge_order[j].0));
        self.entries.select(ndarray::Axis(1), &order)
    }
}

/// Incidence matrix of the edges between two consecutive layers of `net`.
///
/// Rows are the parent layer then the child layer, each by ascending id;
/// columns are ordered by child id.
pub fn build_incidence(
    net: &LayeredNetwork,
    parent_level: u32,
    child_level: u32,
) -> Result<IncidenceMatrix, GraphError> {
    if parent_level != child_level + 1 {
        return Err(GraphError::NonConsecutiveLayers {
            parent: parent_level,
            child: child_level,
        });
    }
    let parents = net
        .layer(parent_level)
        .ok_or(GraphError::UnknownLayer(parent_level))?;
    let children = net
        .layer(child_level)
        .ok_or(GraphError::UnknownLayer(child_level))?;
    incidence_between(net, &parents.members, &children.members)
}

/// Incidence matrix for arbitrary parent and child node sets. Each child must
/// have its parent among `parents`.
pub fn incidence_between(
    net: &LayeredNetwork,
    parents: &[NodeId],
    children: &[NodeId],
) -> Result<IncidenceMatrix, GraphError> {
    let mut parents = parents.to_vec();
    let mut children = children.to_vec();
    parents.sort_unstable();
    children.sort_unstable();

    let row_of: BTreeMap<NodeId, usize> = parents
        .iter()
        .chain(&children)
        .enumerate()
        .map(|(r, &id)| (id, r))
        .collect();

    let mut edge_order = Vec::with_capacity(children.len());
    for &c in &children {
        match net.parent(c) {
            Some(p) if row_of.get(&p).is_some_and(|&r| r < parents.len()) => {
                edge_order.push((p, c))
            }
            _ => return Err(GraphError::OrphanChild(c)),
        }
    }

    let n = parents.len() + children.len();
    let mut entries = Array2::<i8>::zeros((n, edge_order.len()));
    for (j, (p, c)) in edge_order.iter().enumerate() {
        entries[[row_of[p], j]] = -1;
        entries[[row_of[c], j]] = 1;
    }

    Ok(IncidenceMatrix {
        entries,
        node_order: parents.iter().chain(&children).copied().collect(),
        edge_order,
        parent_rows: (0..parents.len()).collect(),
        child_rows: (parents.len()..n).collect(),
    })
}

/// Splits `A` into the parent block `A_d` and the child block `A_i`.
pub fn split_incidence(a: &IncidenceMatrix) -> Result<(Array2<i8>, Array2<i8>), GraphError> {
    if a.parent_rows.is_empty() {
        return Err(GraphError::EmptyParentSet);
    }
    let a_d = a.entries.select(ndarray::Axis(0), &a.parent_rows);
    let a_i = a.entries.select(ndarray::Axis(0), &a.child_rows);
    Ok((a_d, a_i))
}

/// Rebuilds the unique two-layer forest encoded by an incidence matrix.
///
/// Nodes are renumbered densely in row order (parents first); labels carry
/// the original ids as names. Parents land at level 2, children at level 1.
pub fn reconstruct_from_incidence(a: &IncidenceMatrix) -> Result<LayeredNetwork, GraphError> {
    // Re-validate: the matrix may have been assembled by hand.
    let a = IncidenceMatrix::from_parts(
        a.entries.clone(),
        a.node_order.clone(),
        a.parent_rows.clone(),
        a.child_rows.clone(),
    )?;

    let mut ids: Vec<NodeId> = a
        .parent_rows
        .iter()
        .chain(&a.child_rows)
        .map(|&r| a.node_order[r])
        .collect();
    let p = a.parent_rows.len();
    ids[..p].sort_unstable();
    ids[p..].sort_unstable();
    let dense: BTreeMap<NodeId, NodeId> = ids
        .iter()
        .enumerate()
        .map(|(i, &id)| (id, NodeId(i)))
        .collect();

    let labels = ids
        .iter()
        .enumerate()
        .map(|(i, id)| {
            let role = if i < p {
                Role::Unspecified
            } else {
                Role::Consumer
            };
            NodeLabel::new(id.to_string(), role)
        })
        .collect();
    let layers = vec![
        Layer::new(1, (p..ids.len()).map(NodeId).collect()),
        Layer::new(2, (0..p).map(NodeId).collect()),
    ];
    let edges = a.edge_order.iter().map(|(pa, ch)| (dense[pa], dense[ch]));
    LayeredNetwork::new(labels, layers, edges)
}

/// True iff both networks have identical parent-to-child edge sets.
pub fn connectivity_equal(a: &LayeredNetwork, b: &LayeredNetwork) -> Result<bool, GraphError> {
    if !a.same_partition(b) {
        return Err(GraphError::NodeSetMismatch);
    }
    Ok(a.edges == b.edges)
}

/// `-A_d` as floats, the matrix a correctly identified regression equals.
pub fn negated_parent_block(a: &IncidenceMatrix) -> Result<Array2<f64>, GraphError> {
    let (a_d, _) = split_incidence(a)?;
    Ok(a_d.mapv(|v| -f64::from(v)))
}
