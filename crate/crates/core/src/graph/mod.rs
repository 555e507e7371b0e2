//! Undirected attributed graphs and graph-classification datasets.

mod synthetic;
mod tudataset;

use std::collections::{BTreeSet, HashSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use synthetic::{synthetic_corpus, SyntheticConfig, SYNTHETIC_FAMILIES};
pub use tudataset::{category_for_name, load_tudataset, write_tudataset};

/// Undirected graph with a dense node-feature matrix and an optional class label.
///
/// Edges are stored once each as `(u, v)` with `u < v`, sorted. Adjacency lists
/// are built on demand with [`Graph::adjacency`].
#[derive(Clone, Debug, PartialEq)]
pub struct Graph {
    num_nodes: usize,
    edges: Vec<(usize, usize)>,
    features: Vec<f64>,
    feature_dim: usize,
    label: Option<usize>,
}

impl Graph {
    /// Builds a graph, canonicalizing edge orientation and dropping repeated
    /// pairs. Out-of-range endpoints, self-loops and a feature matrix of the
    /// wrong size are rejected.
    pub fn new(
        num_nodes: usize,
        edges: impl IntoIterator<Item = (usize, usize)>,
        features: Vec<f64>,
        feature_dim: usize,
        label: Option<usize>,
    ) -> Result<Self> {
        let mut canonical = Vec::new();
        for (u, v) in edges {
            for index in [u, v] {
                if index >= num_nodes {
                    return Err(Error::NodeOutOfRange { index, num_nodes });
                }
            }
            if u == v {
                return Err(Error::InvalidGraph(format!("self-loop on node {u}")));
            }
            canonical.push((u.min(v), u.max(v)));
        }
        canonical.sort_unstable();
        canonical.dedup();
        let graph = Self::from_raw_parts(num_nodes, canonical, features, feature_dim, label);
        match graph.validate().into_iter().next() {
            Some(problem) => Err(Error::InvalidGraph(problem)),
            None => Ok(graph),
        }
    }

    /// Assembles a graph without any checking. Use [`Graph::validate`] to
    /// inspect the result.
    pub fn from_raw_parts(
        num_nodes: usize,
        edges: Vec<(usize, usize)>,
        features: Vec<f64>,
        feature_dim: usize,
        label: Option<usize>,
    ) -> Self {
        Self {
            num_nodes,
            edges,
            features,
            feature_dim,
            label,
        }
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    /// Row-major `num_nodes × feature_dim` feature matrix.
    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn feature_row(&self, node: usize) -> &[f64] {
        &self.features[node * self.feature_dim..(node + 1) * self.feature_dim]
    }

    pub fn label(&self) -> Option<usize> {
        self.label
    }

    pub fn with_label(mut self, label: Option<usize>) -> Self {
        self.label = label;
        self
    }

    /// Replaces the feature matrix, keeping structure and label.
    pub fn with_features(&self, features: Vec<f64>, feature_dim: usize) -> Result<Self> {
        if features.len() != self.num_nodes * feature_dim {
            return Err(Error::LengthMismatch(format!(
                "{} feature values for {} nodes of dimension {}",
                features.len(),
                self.num_nodes,
                feature_dim
            )));
        }
        Ok(Self {
            features,
            feature_dim,
            ..self.clone()
        })
    }

    /// Replaces the edge set, keeping nodes, features and label.
    pub fn with_edges(&self, edges: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        Self::new(
            self.num_nodes,
            edges,
            self.features.clone(),
            self.feature_dim,
            self.label,
        )
    }

    /// Number of stored edges incident to `node`.
    pub fn degree(&self, node: usize) -> Result<usize> {
        if node >= self.num_nodes {
            return Err(Error::NodeOutOfRange {
                index: node,
                num_nodes: self.num_nodes,
            });
        }
        Ok(self
            .edges
            .iter()
            .filter(|&&(u, v)| u == node || v == node)
            .count())
    }

    pub fn degrees(&self) -> Vec<usize> {
        let mut deg = vec![0; self.num_nodes];
        for &(u, v) in &self.edges {
            deg[u] += 1;
            deg[v] += 1;
        }
        deg
    }

    /// Sorted neighbor lists.
    pub fn adjacency(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.num_nodes];
        for &(u, v) in &self.edges {
            adj[u].push(v);
            adj[v].push(u);
        }
        for list in &mut adj {
            list.sort_unstable();
        }
        adj
    }

    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        self.edges.binary_search(&(u.min(v), u.max(v))).is_ok()
    }

    /// Subgraph on `keep`, reindexed densely in ascending original order.
    pub fn induced_subgraph(&self, keep: &[usize]) -> Result<Self> {
        let keep: BTreeSet<usize> = keep.iter().copied().collect();
        if keep.is_empty() {
            return Err(Error::InvalidArgument(
                "induced subgraph of an empty node set".into(),
            ));
        }
        if let Some(&index) = keep.iter().next_back().filter(|&&i| i >= self.num_nodes) {
            return Err(Error::NodeOutOfRange {
                index,
                num_nodes: self.num_nodes,
            });
        }
        let mut remap = vec![usize::MAX; self.num_nodes];
        let mut features = Vec::with_capacity(keep.len() * self.feature_dim);
        for (new, &old) in keep.iter().enumerate() {
            remap[old] = new;
            features.extend_from_slice(self.feature_row(old));
        }
        let edges = self
            .edges
            .iter()
            .filter(|&&(u, v)| remap[u] != usize::MAX && remap[v] != usize::MAX)
            .map(|&(u, v)| (remap[u], remap[v]))
            .collect();
        Ok(Self::from_raw_parts(
            keep.len(),
            edges,
            features,
            self.feature_dim,
            self.label,
        ))
    }

    /// Whether every node is reachable from node 0. The empty graph counts as connected.
    pub fn is_connected(&self) -> bool {
        if self.num_nodes == 0 {
            return true;
        }
        let adj = self.adjacency();
        let mut seen = vec![false; self.num_nodes];
        let mut stack = vec![0];
        seen[0] = true;
        let mut count = 1;
        while let Some(u) = stack.pop() {
            for &v in &adj[u] {
                if !seen[v] {
                    seen[v] = true;
                    count += 1;
                    stack.push(v);
                }
            }
        }
        count == self.num_nodes
    }

    /// Lists every violated structural invariant; empty iff the graph is well formed.
    pub fn validate(&self) -> Vec<String> {
        let mut problems = Vec::new();
        let mut seen = HashSet::new();
        for &(u, v) in &self.edges {
            if u >= self.num_nodes || v >= self.num_nodes {
                problems.push(format!(
                    "edge ({u}, {v}) has an endpoint outside [0, {})",
                    self.num_nodes
                ));
                continue;
            }
            if u == v {
                problems.push(format!("self-loop on node {u}"));
                continue;
            }
            if !seen.insert((u.min(v), u.max(v))) {
                problems.push(format!("duplicate edge ({u}, {v})"));
            }
        }
        if self.features.len() != self.num_nodes * self.feature_dim {
            problems.push(format!(
                "feature matrix has {} values, expected {} rows of dimension {}",
                self.features.len(),
                self.num_nodes,
                self.feature_dim
            ));
        }
        problems
    }
}

/// Dataset family. Determines the default augmentation pool.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Category {
    Biochemical,
    SocialDense,
    SocialSparse,
    Synthetic,
}

impl Category {
    pub const ALL: [Category; 4] = [
        Category::Biochemical,
        Category::SocialDense,
        Category::SocialSparse,
        Category::Synthetic,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Category::Biochemical => "biochemical",
            Category::SocialDense => "social-dense",
            Category::SocialSparse => "social-sparse",
            Category::Synthetic => "synthetic",
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Category {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Category::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown dataset category {s:?}")))
    }
}

/// A named collection of graphs sharing one feature dimension.
#[derive(Clone, Debug, PartialEq)]
pub struct GraphDataset {
    name: String,
    category: Category,
    graphs: Vec<Graph>,
    num_classes: usize,
    feature_dim: usize,
}

impl GraphDataset {
    pub fn new(
        name: impl Into<String>,
        category: Category,
        graphs: Vec<Graph>,
        num_classes: usize,
    ) -> Result<Self> {
        let feature_dim = graphs.first().map_or(0, Graph::feature_dim);
        for (i, g) in graphs.iter().enumerate() {
            if g.feature_dim() != feature_dim {
                return Err(Error::InvalidDataset(format!(
                    "graph {i} has feature dimension {}, expected {feature_dim}",
                    g.feature_dim()
                )));
            }
            if let Some(label) = g.label().filter(|&l| l >= num_classes) {
                return Err(Error::InvalidDataset(format!(
                    "graph {i} has label {label} but the dataset has {num_classes} classes"
                )));
            }
        }
        Ok(Self {
            name: name.into(),
            category,
            graphs,
            num_classes,
            feature_dim,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn category(&self) -> Category {
        self.category
    }

    pub fn with_category(mut self, category: Category) -> Self {
        self.category = category;
        self
    }

    pub fn graphs(&self) -> &[Graph] {
        &self.graphs
    }

    pub fn len(&self) -> usize {
        self.graphs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.graphs.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    /// Labels of all graphs; fails if any graph is unlabeled.
    pub fn labels(&self) -> Result<Vec<usize>> {
        self.graphs
            .iter()
            .enumerate()
            .map(|(i, g)| {
                g.label()
                    .ok_or_else(|| Error::InvalidDataset(format!("graph {i} has no label")))
            })
            .collect()
    }

    /// Dataset restricted to the given graph indices, in that order.
    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            graphs: indices.iter().map(|&i| self.graphs[i].clone()).collect(),
            ..self.clone_meta()
        }
    }

    fn clone_meta(&self) -> Self {
        Self {
            name: self.name.clone(),
            category: self.category,
            graphs: Vec::new(),
            num_classes: self.num_classes,
            feature_dim: self.feature_dim,
        }
    }

    pub fn mean_num_nodes(&self) -> f64 {
        if self.graphs.is_empty() {
            return 0.0;
        }
        self.graphs.iter().map(|g| g.num_nodes() as f64).sum::<f64>() / self.graphs.len() as f64
    }
}

/// Single-column features `deg / max_deg`, with `max_deg` taken over every
/// graph passed in so the scale is shared across a dataset.
pub fn degree_features(structures: &[(usize, Vec<(usize, usize)>)]) -> Vec<Vec<f64>> {
    let degrees: Vec<Vec<usize>> = structures
        .iter()
        .map(|(n, edges)| {
            let mut deg = vec![0usize; *n];
            for &(u, v) in edges {
                deg[u] += 1;
                deg[v] += 1;
            }
            deg
        })
        .collect();
    let max_deg = degrees.iter().flatten().copied().max().unwrap_or(0);
    degrees
        .into_iter()
        .map(|deg| {
            deg.into_iter()
                .map(|d| if max_deg == 0 { 0.0 } else { d as f64 / max_deg as f64 })
                .collect()
        })
        .collect()
}
