//! Undirected attributed graphs and the operations applied to them before
//! encoding: propagation-operator construction, synthetic generation,
//! augmentation, label corruption, source partitioning and edge splits.

mod io;
mod ops;
mod sbm;

use std::collections::HashSet;
use std::path::PathBuf;

use thiserror::Error;

use crate::scalar::Scalar;
use crate::tensor::{CsrMatrix, Matrix};

pub use io::{load_graph, save_graph, GraphMeta};
pub use ops::{augment, inject_label_noise, partition_sources, split_edges, EdgeSplit, SourceGraph};
pub use sbm::{block_centers, generate_sbm, SbmConfig};

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("edge ({u}, {v}) out of range for {n} nodes")]
    EdgeOutOfRange { u: usize, v: usize, n: usize },

    #[error("self-loop on node {0}; self-loops are implied by normalization")]
    SelfLoop(usize),

    #[error("duplicate undirected edge ({0}, {1})")]
    DuplicateEdge(usize, usize),

    #[error("feature matrix has {found} rows, expected {expected}")]
    FeatureRows { expected: usize, found: usize },

    #[error("label vector has {found} entries, expected {expected}")]
    LabelCount { expected: usize, found: usize },

    #[error("node {node} has label {label} outside [0, {num_classes})")]
    LabelOutOfRange { node: usize, label: usize, num_classes: usize },

    #[error("labels present but class count unknown")]
    MissingNumClasses,

    #[error("{}:{line}: {message}", file.display())]
    Parse { file: PathBuf, line: usize, message: String },

    #[error("io error at {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("edge split needs at least 4 edges, graph has {0}")]
    TooFewEdges(usize),

    #[error("cannot partition {nodes} nodes into {parts} sources")]
    TooManyParts { parts: usize, nodes: usize },

    #[error("only {available} non-edges available, {needed} negatives requested")]
    NotEnoughNonEdges { available: usize, needed: usize },
}

/// Per-node class id, `None` when unlabeled.
pub type Labels = Vec<Option<usize>>;

/// Undirected graph with dense node features and optional labels.
///
/// Edges are stored once as `(u, v)` with `u < v`, sorted. Self-loops are
/// never stored.
#[derive(Debug, Clone, PartialEq)]
pub struct Graph<S> {
    edges: Vec<(usize, usize)>,
    features: Matrix<S>,
    labels: Labels,
    num_classes: Option<usize>,
}

impl<S: Scalar> Graph<S> {
    pub fn new(
        features: Matrix<S>,
        edges: Vec<(usize, usize)>,
        labels: Option<Labels>,
        num_classes: Option<usize>,
    ) -> Result<Self, GraphError> {
        let n = features.rows();
        let mut canon: Vec<(usize, usize)> = Vec::with_capacity(edges.len());
        for (u, v) in edges {
            if u >= n || v >= n {
                return Err(GraphError::EdgeOutOfRange { u, v, n });
            }
            if u == v {
                return Err(GraphError::SelfLoop(u));
            }
            canon.push((u.min(v), u.max(v)));
        }
        canon.sort_unstable();
        if let Some(w) = canon.windows(2).find(|w| w[0] == w[1]) {
            return Err(GraphError::DuplicateEdge(w[0].0, w[0].1));
        }
        let labels = match labels {
            Some(l) => {
                if l.len() != n {
                    return Err(GraphError::LabelCount { expected: n, found: l.len() });
                }
                let has_any = l.iter().any(Option::is_some);
                match num_classes {
                    Some(c) => {
                        if let Some((node, &Some(label))) =
                            l.iter().enumerate().find(|(_, y)| matches!(y, Some(v) if *v >= c))
                        {
                            return Err(GraphError::LabelOutOfRange { node, label, num_classes: c });
                        }
                    }
                    None if has_any => return Err(GraphError::MissingNumClasses),
                    None => {}
                }
                l
            }
            None => vec![None; n],
        };
        Ok(Self { edges: canon, features, labels, num_classes })
    }

    pub fn num_nodes(&self) -> usize {
        self.features.rows()
    }

    pub fn feature_dim(&self) -> usize {
        self.features.cols()
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn features(&self) -> &Matrix<S> {
        &self.features
    }

    pub fn labels(&self) -> &[Option<usize>] {
        &self.labels
    }

    pub fn num_classes(&self) -> Option<usize> {
        self.num_classes
    }

    pub fn labeled_count(&self) -> usize {
        self.labels.iter().filter(|l| l.is_some()).count()
    }

    /// Same graph with labels replaced.
    pub fn with_labels(&self, labels: Labels) -> Result<Self, GraphError> {
        Graph::new(self.features.clone(), self.edges.clone(), Some(labels), self.num_classes)
    }

    /// Same nodes, features and labels over a different edge set.
    pub fn with_edges(&self, edges: Vec<(usize, usize)>) -> Result<Self, GraphError> {
        Graph::new(self.features.clone(), edges, Some(self.labels.clone()), self.num_classes)
    }

    pub fn edge_set(&self) -> HashSet<(usize, usize)> {
        self.edges.iter().copied().collect()
    }

    pub fn adjacency_lists(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.num_nodes()];
        for &(u, v) in &self.edges {
            adj[u].push(v);
            adj[v].push(u);
        }
        adj
    }
}

/// Symmetrically normalized adjacency with self-loops,
/// `D^{-1/2} (A + I) D^{-1/2}` where `D` is the degree matrix of `A + I`.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedAdjacency<S>(CsrMatrix<S>);

impl<S: Scalar> NormalizedAdjacency<S> {
    /// Propagation operator of an edgeless graph on `n` nodes.
    pub fn identity(n: usize) -> Self {
        Self(CsrMatrix::identity(n))
    }

    pub fn csr(&self) -> &CsrMatrix<S> {
        &self.0
    }

    pub fn n(&self) -> usize {
        self.0.n()
    }
}

pub fn normalize_adjacency<S: Scalar>(g: &Graph<S>) -> NormalizedAdjacency<S> {
    let adj = g.adjacency_lists();
    let deg: Vec<S> = adj.iter().map(|nb| S::from_usize(nb.len() + 1).unwrap()).collect();
    let rows = adj
        .iter()
        .enumerate()
        .map(|(i, nb)| {
            let mut row = Vec::with_capacity(nb.len() + 1);
            row.push((i, S::one() / deg[i]));
            row.extend(nb.iter().map(|&j| (j, S::one() / (deg[i] * deg[j]).sqrt())));
            row
        })
        .collect();
    NormalizedAdjacency(CsrMatrix::from_rows(g.num_nodes(), rows))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn graph(n: usize, edges: Vec<(usize, usize)>) -> Graph<f64> {
        Graph::new(Matrix::zeros(n, 1), edges, None, None).unwrap()
    }

    #[test]
    fn isolated_node_normalizes_to_one() {
        let a = normalize_adjacency(&graph(1, vec![]));
        assert_eq!(a.csr().to_dense(), Matrix::from_rows(&[&[1.0]]).unwrap());
    }

    #[test]
    fn single_edge() {
        let a = normalize_adjacency(&graph(2, vec![(0, 1)])).csr().to_dense();
        assert_eq!(a, Matrix::from_rows(&[&[0.5, 0.5], &[0.5, 0.5]]).unwrap());
    }

    #[test]
    fn path_of_three() {
        let a = normalize_adjacency(&graph(3, vec![(0, 1), (1, 2)])).csr().to_dense();
        assert!((a.get(0, 1) - 1.0 / 6f64.sqrt()).abs() < 1e-15);
        assert!((a.get(0, 1) - 0.40825).abs() < 1e-5);
        assert_eq!(a.get(0, 2), 0.0);
    }

    #[test]
    fn rejects_bad_edges() {
        let f = || Matrix::<f64>::zeros(3, 1);
        assert!(matches!(Graph::new(f(), vec![(0, 3)], None, None), Err(GraphError::EdgeOutOfRange { .. })));
        assert!(matches!(Graph::new(f(), vec![(1, 1)], None, None), Err(GraphError::SelfLoop(1))));
        assert!(matches!(
            Graph::new(f(), vec![(0, 1), (1, 0)], None, None),
            Err(GraphError::DuplicateEdge(0, 1))
        ));
    }

    #[test]
    fn rejects_out_of_range_label() {
        let err = Graph::<f64>::new(Matrix::zeros(2, 1), vec![], Some(vec![Some(0), Some(2)]), Some(2));
        assert!(matches!(err, Err(GraphError::LabelOutOfRange { node: 1, label: 2, .. })));
    }
}
