//! Undirected simple graphs in compressed-row form, labels, splits, and
//! edge homophily.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::SparseMatrix;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GraphError {
    #[error("edge ({0}, {1}) references a node outside 0..{2}")]
    NodeOutOfRange(usize, usize, usize),
    #[error("invalid graph: {}", .0.join("; "))]
    Invalid(Vec<String>),
    #[error("labels have length {labels}, graph has {nodes} nodes")]
    LengthMismatch { labels: usize, nodes: usize },
    #[error("invalid labels: {0}")]
    BadLabels(String),
    #[error("invalid split: {0}")]
    BadSplit(String),
}

/// Symmetric adjacency without self-loops or duplicate entries.
///
/// Each undirected edge `{u, v}` is stored twice, once in row `u` and once
/// in row `v`. Column indices within a row are sorted ascending.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Graph {
    num_nodes: usize,
    row_offsets: Vec<usize>,
    col_indices: Vec<usize>,
}

/// What [`Graph::from_edges`] had to clean up.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BuildReport {
    pub self_loops_removed: usize,
    pub duplicates_removed: usize,
}

impl Graph {
    /// Builds a graph from undirected edges given in either orientation.
    /// Self-loops are dropped and repeated edges merged; both are counted
    /// in the returned report.
    pub fn from_edges(
        num_nodes: usize,
        edges: impl IntoIterator<Item = (usize, usize)>,
    ) -> Result<(Self, BuildReport), GraphError> {
        let mut report = BuildReport::default();
        let mut unique = BTreeSet::new();
        for (u, v) in edges {
            if u >= num_nodes || v >= num_nodes {
                return Err(GraphError::NodeOutOfRange(u, v, num_nodes));
            }
            if u == v {
                report.self_loops_removed += 1;
                continue;
            }
            if !unique.insert((u.min(v), u.max(v))) {
                report.duplicates_removed += 1;
            }
        }
        let mut adj = vec![Vec::new(); num_nodes];
        for &(u, v) in &unique {
            adj[u].push(v);
            adj[v].push(u);
        }
        Ok((Self::from_adjacency_lists(adj), report))
    }

    /// Like [`Graph::from_edges`] but discards the cleanup report.
    pub fn from_edge_list(num_nodes: usize, edges: &[(usize, usize)]) -> Result<Self, GraphError> {
        Self::from_edges(num_nodes, edges.iter().copied()).map(|(g, _)| g)
    }

    fn from_adjacency_lists(mut adj: Vec<Vec<usize>>) -> Self {
        let mut row_offsets = Vec::with_capacity(adj.len() + 1);
        row_offsets.push(0);
        let mut col_indices = Vec::new();
        for row in &mut adj {
            row.sort_unstable();
            col_indices.extend_from_slice(row);
            row_offsets.push(col_indices.len());
        }
        Self {
            num_nodes: adj.len(),
            row_offsets,
            col_indices,
        }
    }

    /// Wraps raw CSR arrays after checking every invariant.
    pub fn from_csr(num_nodes: usize, row_offsets: Vec<usize>, col_indices: Vec<usize>) -> Result<Self, GraphError> {
        let violations = validate_parts(num_nodes, &row_offsets, &col_indices);
        if !violations.is_empty() {
            return Err(GraphError::Invalid(violations));
        }
        Ok(Self {
            num_nodes,
            row_offsets,
            col_indices,
        })
    }

    pub fn empty(num_nodes: usize) -> Self {
        Self {
            num_nodes,
            row_offsets: vec![0; num_nodes + 1],
            col_indices: Vec::new(),
        }
    }

    #[inline]
    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    /// Number of undirected edges `M`.
    #[inline]
    pub fn num_edges(&self) -> usize {
        self.col_indices.len() / 2
    }

    pub fn row_offsets(&self) -> &[usize] {
        &self.row_offsets
    }

    pub fn col_indices(&self) -> &[usize] {
        &self.col_indices
    }

    #[inline]
    pub fn neighbors(&self, v: usize) -> &[usize] {
        &self.col_indices[self.row_offsets[v]..self.row_offsets[v + 1]]
    }

    #[inline]
    pub fn degree(&self, v: usize) -> usize {
        self.row_offsets[v + 1] - self.row_offsets[v]
    }

    pub fn degrees(&self) -> Vec<usize> {
        (0..self.num_nodes).map(|v| self.degree(v)).collect()
    }

    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        self.neighbors(u).binary_search(&v).is_ok()
    }

    /// Each undirected edge once, as `(u, v)` with `u < v`, in row order.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.num_nodes).flat_map(move |u| {
            self.neighbors(u)
                .iter()
                .copied()
                .filter(move |&v| v > u)
                .map(move |v| (u, v))
        })
    }

    /// Checks every structural invariant; empty on success.
    pub fn validate(&self) -> Vec<String> {
        validate_parts(self.num_nodes, &self.row_offsets, &self.col_indices)
    }

    /// Relabels nodes: node `v` becomes `perm[v]`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        assert_eq!(perm.len(), self.num_nodes);
        let mut adj = vec![Vec::new(); self.num_nodes];
        for (u, v) in self.edges() {
            adj[perm[u]].push(perm[v]);
            adj[perm[v]].push(perm[u]);
        }
        Self::from_adjacency_lists(adj)
    }

    /// Raw adjacency `A` with unit weights.
    pub fn adjacency(&self) -> SparseMatrix {
        SparseMatrix::new(
            self.num_nodes,
            self.num_nodes,
            self.row_offsets.clone(),
            self.col_indices.clone(),
            vec![1.0; self.col_indices.len()],
        )
        .expect("graph invariants imply a well-formed CSR")
    }

    /// `D^{-1/2} A D^{-1/2}` on the pattern of `A`. Rows of isolated nodes
    /// are empty.
    pub fn normalized_adjacency(&self) -> SparseMatrix {
        let deg = self.degrees();
        let mut values = Vec::with_capacity(self.col_indices.len());
        for u in 0..self.num_nodes {
            for &v in self.neighbors(u) {
                values.push(1.0 / ((deg[u] * deg[v]) as f64).sqrt());
            }
        }
        SparseMatrix::new(
            self.num_nodes,
            self.num_nodes,
            self.row_offsets.clone(),
            self.col_indices.clone(),
            values,
        )
        .expect("graph invariants imply a well-formed CSR")
    }

    /// GCN-style `D̃^{-1/2} (A + I) D̃^{-1/2}` with `D̃ = D + I`.
    pub fn normalized_adjacency_with_self_loops(&self) -> SparseMatrix {
        let deg: Vec<usize> = self.degrees().into_iter().map(|d| d + 1).collect();
        let weight = |u: usize, v: usize| 1.0 / ((deg[u] * deg[v]) as f64).sqrt();
        let mut row_offsets = vec![0];
        let mut col_indices = Vec::with_capacity(self.col_indices.len() + self.num_nodes);
        let mut values = Vec::with_capacity(col_indices.capacity());
        for u in 0..self.num_nodes {
            let mut inserted = false;
            for &v in self.neighbors(u) {
                if !inserted && v > u {
                    col_indices.push(u);
                    values.push(weight(u, u));
                    inserted = true;
                }
                col_indices.push(v);
                values.push(weight(u, v));
            }
            if !inserted {
                col_indices.push(u);
                values.push(weight(u, u));
            }
            row_offsets.push(col_indices.len());
        }
        SparseMatrix::new(self.num_nodes, self.num_nodes, row_offsets, col_indices, values)
            .expect("well-formed by construction")
    }
}

fn validate_parts(num_nodes: usize, row_offsets: &[usize], col_indices: &[usize]) -> Vec<String> {
    let mut violations = Vec::new();
    if row_offsets.len() != num_nodes + 1 {
        violations.push(format!(
            "row_offsets has length {}, expected {}",
            row_offsets.len(),
            num_nodes + 1
        ));
        return violations;
    }
    if row_offsets[0] != 0 {
        violations.push("row_offsets[0] != 0".into());
    }
    if row_offsets.windows(2).any(|w| w[0] > w[1]) {
        violations.push("row_offsets decreasing".into());
        return violations;
    }
    if row_offsets[num_nodes] != col_indices.len() {
        violations.push("row_offsets end does not match col_indices length".into());
        return violations;
    }
    if let Some(&c) = col_indices.iter().find(|&&c| c >= num_nodes) {
        violations.push(format!("column index {c} out of range"));
        return violations;
    }
    let row = |v: usize| &col_indices[row_offsets[v]..row_offsets[v + 1]];
    for u in 0..num_nodes {
        let r = row(u);
        if r.contains(&u) {
            violations.push(format!("self-loop at node {u}"));
        }
        let mut sorted = r.to_vec();
        sorted.sort_unstable();
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            violations.push(format!("duplicate entry in row {u}"));
        }
        for &v in r {
            if v != u && !row(v).contains(&u) {
                violations.push(format!("asymmetric edge ({u}, {v})"));
            }
        }
    }
    violations
}

/// Node class assignments.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Labels {
    values: Vec<usize>,
    num_classes: usize,
}

impl Labels {
    pub fn new(values: Vec<usize>, num_classes: usize) -> Result<Self, GraphError> {
        if num_classes < 2 {
            return Err(GraphError::BadLabels(format!("need at least 2 classes, got {num_classes}")));
        }
        if let Some(&bad) = values.iter().find(|&&y| y >= num_classes) {
            return Err(GraphError::BadLabels(format!("label {bad} outside 0..{num_classes}")));
        }
        Ok(Self { values, num_classes })
    }

    /// Infers `C` as `max + 1`, but at least 2.
    pub fn from_values(values: Vec<usize>) -> Result<Self, GraphError> {
        let c = values.iter().max().map_or(2, |m| (m + 1).max(2));
        Self::new(values, c)
    }

    pub fn values(&self) -> &[usize] {
        &self.values
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, v: usize) -> usize {
        self.values[v]
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for &y in &self.values {
            counts[y] += 1;
        }
        counts
    }

    pub fn permuted(&self, perm: &[usize]) -> Self {
        let mut values = vec![0; self.values.len()];
        for (v, &y) in self.values.iter().enumerate() {
            values[perm[v]] = y;
        }
        Self {
            values,
            num_classes: self.num_classes,
        }
    }
}

/// Train / validation / test node sets.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DataSplit {
    pub train: Vec<usize>,
    pub valid: Vec<usize>,
    pub test: Vec<usize>,
}

impl DataSplit {
    pub fn new(train: Vec<usize>, valid: Vec<usize>, test: Vec<usize>, num_nodes: usize) -> Result<Self, GraphError> {
        let split = Self { train, valid, test };
        split.check(num_nodes)?;
        Ok(split)
    }

    pub fn check(&self, num_nodes: usize) -> Result<(), GraphError> {
        if self.train.is_empty() || self.valid.is_empty() {
            return Err(GraphError::BadSplit("train and valid must be non-empty".into()));
        }
        let mut seen = vec![false; num_nodes];
        for &i in self.train.iter().chain(&self.valid).chain(&self.test) {
            if i >= num_nodes {
                return Err(GraphError::BadSplit(format!("index {i} >= {num_nodes}")));
            }
            if seen[i] {
                return Err(GraphError::BadSplit(format!("index {i} appears twice")));
            }
            seen[i] = true;
        }
        Ok(())
    }
}

/// Edge homophily, with a flag for the edgeless case.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Homophily {
    pub value: f64,
    /// Set when the graph has no edges; `value` is then 0.
    pub no_edges: bool,
}

/// Fraction of undirected edges whose endpoints share a label.
pub fn edge_homophily(g: &Graph, labels: &Labels) -> Result<Homophily, GraphError> {
    if labels.len() != g.num_nodes() {
        return Err(GraphError::LengthMismatch {
            labels: labels.len(),
            nodes: g.num_nodes(),
        });
    }
    let m = g.num_edges();
    if m == 0 {
        return Ok(Homophily {
            value: 0.0,
            no_edges: true,
        });
    }
    let same = g.edges().filter(|&(u, v)| labels.get(u) == labels.get(v)).count();
    Ok(Homophily {
        value: same as f64 / m as f64,
        no_edges: false,
    })
}

pub fn degrees(g: &Graph) -> Vec<usize> {
    g.degrees()
}

pub fn normalized_adjacency(g: &Graph) -> SparseMatrix {
    g.normalized_adjacency()
}

/// `Ok(())` or the list of violated invariants.
pub fn validate(g: &Graph) -> Result<(), Vec<String>> {
    let v = g.validate();
    if v.is_empty() {
        Ok(())
    } else {
        Err(v)
    }
}

/// Small named graphs used across tests and demos.
pub mod small {
    use super::Graph;

    pub fn path(n: usize) -> Graph {
        Graph::from_edge_list(n, &(1..n).map(|i| (i - 1, i)).collect::<Vec<_>>()).unwrap()
    }

    pub fn cycle(n: usize) -> Graph {
        Graph::from_edge_list(n, &(0..n).map(|i| (i, (i + 1) % n)).collect::<Vec<_>>()).unwrap()
    }

    pub fn complete(n: usize) -> Graph {
        let edges: Vec<_> = (0..n).flat_map(|u| (u + 1..n).map(move |v| (u, v))).collect();
        Graph::from_edge_list(n, &edges).unwrap()
    }

    /// Star `K_{1,leaves}` with the center at node 0.
    pub fn star(leaves: usize) -> Graph {
        Graph::from_edge_list(leaves + 1, &(1..=leaves).map(|i| (0, i)).collect::<Vec<_>>()).unwrap()
    }
}
