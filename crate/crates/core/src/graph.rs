//! Graph storage: features, CSR neighbor lists, labels and split masks.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::DenseMatrix;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Node,
    Graph,
}

impl Task {
    pub fn as_str(self) -> &'static str {
        match self {
            Task::Node => "node",
            Task::Graph => "graph",
        }
    }
}

/// Train/validation/test membership, one flag per labelled item (node or
/// graph, depending on the task).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Masks {
    pub train: Vec<bool>,
    pub val: Vec<bool>,
    pub test: Vec<bool>,
}

impl Masks {
    pub fn indices(mask: &[bool]) -> Vec<usize> {
        mask.iter()
            .enumerate()
            .filter_map(|(i, &m)| m.then_some(i))
            .collect()
    }

    fn validate(&self, len: usize) -> Result<()> {
        for (name, m) in [("train", &self.train), ("val", &self.val), ("test", &self.test)] {
            if m.len() != len {
                return Err(Error::Validation(format!(
                    "{name} mask has {} entries, expected {len}",
                    m.len()
                )));
            }
        }
        for i in 0..len {
            let n = self.train[i] as u8 + self.val[i] as u8 + self.test[i] as u8;
            if n > 1 {
                return Err(Error::Validation(format!("masks overlap at index {i}")));
            }
        }
        Ok(())
    }
}

/// Node-to-graph membership for graph-level tasks (a disjoint union).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GraphIndex {
    pub node_graph: Vec<usize>,
    pub num_graphs: usize,
}

/// Immutable attributed graph with sorted, duplicate-free neighbor lists.
///
/// Self-loops are never stored; models add them logically.
#[derive(Clone, Debug, PartialEq)]
pub struct Graph {
    features: DenseMatrix,
    offsets: Vec<usize>,
    indices: Vec<usize>,
    labels: Vec<usize>,
    num_classes: usize,
    masks: Masks,
    directed: bool,
    task: Task,
    graph_index: Option<GraphIndex>,
}

/// Everything needed to assemble a [`Graph`].
#[derive(Clone, Debug)]
pub struct GraphParts {
    pub features: DenseMatrix,
    pub neighbors: Vec<Vec<usize>>,
    pub labels: Vec<usize>,
    pub num_classes: usize,
    pub masks: Masks,
    pub directed: bool,
    pub task: Task,
    pub graph_index: Option<GraphIndex>,
}

impl Graph {
    /// Validates and assembles a graph. Neighbor lists are sorted here;
    /// duplicates, self-loops, out-of-range indices and (for undirected
    /// graphs) asymmetric edges are rejected.
    pub fn from_parts(parts: GraphParts) -> Result<Self> {
        let n = parts.features.rows();
        if parts.neighbors.len() != n {
            return Err(Error::Validation(format!(
                "{} neighbor lists for {n} nodes",
                parts.neighbors.len()
            )));
        }
        let mut offsets = Vec::with_capacity(n + 1);
        let mut indices = Vec::new();
        offsets.push(0);
        for (v, list) in parts.neighbors.into_iter().enumerate() {
            let mut list = list;
            list.sort_unstable();
            for (i, &u) in list.iter().enumerate() {
                if u >= n {
                    return Err(Error::Validation(format!(
                        "node {v} lists neighbor {u} but there are {n} nodes"
                    )));
                }
                if u == v {
                    return Err(Error::Validation(format!("self-loop on node {v}")));
                }
                if i > 0 && list[i - 1] == u {
                    return Err(Error::Validation(format!(
                        "duplicate neighbor {u} of node {v}"
                    )));
                }
            }
            indices.extend_from_slice(&list);
            offsets.push(indices.len());
        }
        let graph = Self {
            features: parts.features,
            offsets,
            indices,
            labels: parts.labels,
            num_classes: parts.num_classes,
            masks: parts.masks,
            directed: parts.directed,
            task: parts.task,
            graph_index: parts.graph_index,
        };
        graph.validate()?;
        Ok(graph)
    }

    fn validate(&self) -> Result<()> {
        let n = self.num_nodes();
        let labelled = match (self.task, &self.graph_index) {
            (Task::Node, _) => n,
            (Task::Graph, Some(gi)) => {
                if gi.node_graph.len() != n {
                    return Err(Error::Validation(format!(
                        "{} graph ids for {n} nodes",
                        gi.node_graph.len()
                    )));
                }
                if let Some(&g) = gi.node_graph.iter().find(|&&g| g >= gi.num_graphs) {
                    return Err(Error::Validation(format!(
                        "graph id {g} with {} graphs",
                        gi.num_graphs
                    )));
                }
                for v in 0..n {
                    if self
                        .neighbors(v)
                        .iter()
                        .any(|&u| gi.node_graph[u] != gi.node_graph[v])
                    {
                        return Err(Error::Validation(format!(
                            "node {v} has an edge crossing graph boundaries"
                        )));
                    }
                }
                gi.num_graphs
            }
            (Task::Graph, None) => {
                return Err(Error::Validation(
                    "graph-level task without graph membership".into(),
                ))
            }
        };
        if self.labels.len() != labelled {
            return Err(Error::Validation(format!(
                "{} labels for {labelled} items",
                self.labels.len()
            )));
        }
        if let Some(&l) = self.labels.iter().find(|&&l| l >= self.num_classes) {
            return Err(Error::Validation(format!(
                "label {l} with {} classes",
                self.num_classes
            )));
        }
        self.masks.validate(labelled)?;
        if !self.directed {
            self.check_symmetric()?;
        }
        Ok(())
    }

    /// Confirms every edge `(v, u)` has its reverse `(u, v)`.
    pub fn check_symmetric(&self) -> Result<()> {
        for v in 0..self.num_nodes() {
            for &u in self.neighbors(v) {
                if self.neighbors(u).binary_search(&v).is_err() {
                    return Err(Error::Validation(format!(
                        "undirected graph has edge {v}->{u} without {u}->{v}"
                    )));
                }
            }
        }
        Ok(())
    }

    #[inline]
    pub fn num_nodes(&self) -> usize {
        self.features.rows()
    }

    /// Number of stored (directed) edge slots.
    #[inline]
    pub fn num_edge_slots(&self) -> usize {
        self.indices.len()
    }

    pub fn num_features(&self) -> usize {
        self.features.cols()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn features(&self) -> &DenseMatrix {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn masks(&self) -> &Masks {
        &self.masks
    }

    pub fn is_directed(&self) -> bool {
        self.directed
    }

    pub fn task(&self) -> Task {
        self.task
    }

    pub fn graph_index(&self) -> Option<&GraphIndex> {
        self.graph_index.as_ref()
    }

    /// Number of labelled items: nodes for node tasks, graphs otherwise.
    pub fn num_items(&self) -> usize {
        self.labels.len()
    }

    #[inline]
    pub fn neighbors(&self, v: usize) -> &[usize] {
        &self.indices[self.offsets[v]..self.offsets[v + 1]]
    }

    #[inline]
    pub fn degree(&self, v: usize) -> usize {
        self.offsets[v + 1] - self.offsets[v]
    }

    pub fn try_neighbors(&self, v: usize) -> Result<&[usize]> {
        if v >= self.num_nodes() {
            return Err(Error::Index {
                index: v,
                len: self.num_nodes(),
            });
        }
        Ok(self.neighbors(v))
    }

    pub fn try_degree(&self, v: usize) -> Result<usize> {
        self.try_neighbors(v).map(<[usize]>::len)
    }

    pub fn offsets(&self) -> &[usize] {
        &self.offsets
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn neighbor_lists(&self) -> Vec<Vec<usize>> {
        (0..self.num_nodes())
            .map(|v| self.neighbors(v).to_vec())
            .collect()
    }

    /// Decomposes into parts, e.g. to rebuild with modified structure.
    pub fn to_parts(&self) -> GraphParts {
        GraphParts {
            features: self.features.clone(),
            neighbors: self.neighbor_lists(),
            labels: self.labels.clone(),
            num_classes: self.num_classes,
            masks: self.masks.clone(),
            directed: self.directed,
            task: self.task,
            graph_index: self.graph_index.clone(),
        }
    }

    /// Same structure and labels with different node features.
    pub fn with_features(&self, features: DenseMatrix) -> Result<Self> {
        if features.rows() != self.num_nodes() {
            return Err(Error::Shape(format!(
                "{} feature rows for {} nodes",
                features.rows(),
                self.num_nodes()
            )));
        }
        let mut g = self.clone();
        g.features = features;
        Ok(g)
    }

    /// Same features and labels with different neighbor lists.
    pub fn with_neighbors(&self, neighbors: Vec<Vec<usize>>) -> Result<Self> {
        let mut parts = self.to_parts();
        parts.neighbors = neighbors;
        Self::from_parts(parts)
    }

    /// Masks with the given split replaced.
    pub fn with_masks(&self, masks: Masks) -> Result<Self> {
        let mut g = self.clone();
        g.masks = masks;
        g.validate()?;
        Ok(g)
    }
}

/// Disjoint union of graphs with per-node graph ids for pooling.
#[derive(Clone, Debug)]
pub struct GraphBatch {
    pub graph: Graph,
    /// `node_offsets[g]..node_offsets[g + 1]` are the nodes of graph `g`.
    pub node_offsets: Vec<usize>,
}

impl GraphBatch {
    /// Unions node-task graphs that each carry one graph-level label.
    /// Each member's masks are ignored; `masks` applies to the members.
    pub fn union(members: &[(Graph, usize)], num_classes: usize, masks: Masks) -> Result<Self> {
        let Some((first, _)) = members.first() else {
            return Err(Error::Contract("empty graph batch".into()));
        };
        let f = first.num_features();
        let mut node_offsets = vec![0];
        let mut rows: Vec<f32> = Vec::new();
        let mut neighbors = Vec::new();
        let mut node_graph = Vec::new();
        let mut labels = Vec::new();
        let mut directed = false;
        for (gid, (g, label)) in members.iter().enumerate() {
            if g.num_features() != f {
                return Err(Error::Shape(format!(
                    "graph {gid} has {} features, expected {f}",
                    g.num_features()
                )));
            }
            let base = *node_offsets.last().unwrap();
            rows.extend_from_slice(g.features().data());
            for v in 0..g.num_nodes() {
                neighbors.push(g.neighbors(v).iter().map(|&u| u + base).collect());
                node_graph.push(gid);
            }
            directed |= g.is_directed();
            labels.push(*label);
            node_offsets.push(base + g.num_nodes());
        }
        let n = *node_offsets.last().unwrap();
        let graph = Graph::from_parts(GraphParts {
            features: DenseMatrix::new(n, f, rows)?,
            neighbors,
            labels,
            num_classes,
            masks,
            directed,
            task: Task::Graph,
            graph_index: Some(GraphIndex {
                node_graph,
                num_graphs: members.len(),
            }),
        })?;
        Ok(Self {
            graph,
            node_offsets,
        })
    }
}
