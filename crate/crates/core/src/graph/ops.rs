use std::collections::HashSet;

use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::scalar::Scalar;

use super::{Graph, GraphError, Labels};

/// Corrupts exactly `round(rate * labeled)` labeled nodes, chosen without
/// replacement, each to a uniformly random *different* class.
pub fn inject_label_noise(
    labels: &[Option<usize>],
    rate: f64,
    num_classes: usize,
    seed: u64,
) -> Result<Labels, GraphError> {
    if !(0.0..=1.0).contains(&rate) {
        return Err(GraphError::InvalidConfig(format!("noise rate {rate} outside [0, 1]")));
    }
    if let Some((node, &Some(label))) =
        labels.iter().enumerate().find(|(_, y)| matches!(y, Some(v) if *v >= num_classes))
    {
        return Err(GraphError::LabelOutOfRange { node, label, num_classes });
    }
    let labeled: Vec<usize> = labels.iter().enumerate().filter(|(_, y)| y.is_some()).map(|(i, _)| i).collect();
    let count = (rate * labeled.len() as f64).round() as usize;
    let mut out = labels.to_vec();
    if count == 0 {
        return Ok(out);
    }
    if num_classes < 2 {
        return Err(GraphError::InvalidConfig("label noise needs at least 2 classes".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for pick in index::sample(&mut rng, labeled.len(), count).into_iter() {
        let node = labeled[pick];
        let old = out[node].expect("labeled");
        let mut new = rng.random_range(0..num_classes - 1);
        if new >= old {
            new += 1;
        }
        out[node] = Some(new);
    }
    Ok(out)
}

/// Induced subgraph of one source, with the original id of every node.
#[derive(Debug, Clone, PartialEq)]
pub struct SourceGraph<S> {
    pub graph: Graph<S>,
    pub original_ids: Vec<usize>,
}

/// Splits the nodes uniformly at random into `m` disjoint parts whose sizes
/// differ by at most one, and returns the induced subgraph of each part.
/// Edges crossing parts are dropped.
pub fn partition_sources<S: Scalar>(g: &Graph<S>, m: usize, seed: u64) -> Result<Vec<SourceGraph<S>>, GraphError> {
    let n = g.num_nodes();
    if m == 0 || m > n {
        return Err(GraphError::TooManyParts { parts: m, nodes: n });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);

    let mut part_of = vec![0usize; n];
    let (base, extra) = (n / m, n % m);
    let mut parts = Vec::with_capacity(m);
    let mut start = 0;
    for p in 0..m {
        let size = base + usize::from(p < extra);
        let mut ids = order[start..start + size].to_vec();
        ids.sort_unstable();
        for &i in &ids {
            part_of[i] = p;
        }
        parts.push(ids);
        start += size;
    }

    let mut out = Vec::with_capacity(m);
    for (p, ids) in parts.into_iter().enumerate() {
        let mut local = vec![usize::MAX; n];
        for (k, &i) in ids.iter().enumerate() {
            local[i] = k;
        }
        let edges = g
            .edges()
            .iter()
            .filter(|&&(u, v)| part_of[u] == p && part_of[v] == p)
            .map(|&(u, v)| (local[u], local[v]))
            .collect();
        let features = g.features().select_rows(&ids).expect("ids in range");
        let labels = ids.iter().map(|&i| g.labels()[i]).collect();
        let graph = Graph::new(features, edges, Some(labels), g.num_classes())?;
        out.push(SourceGraph { graph, original_ids: ids });
    }
    Ok(out)
}

/// Random view of `g`: each edge dropped with probability `edge_drop`, each
/// feature column zeroed with probability `feature_mask`.
pub fn augment<S: Scalar>(g: &Graph<S>, edge_drop: f64, feature_mask: f64, seed: u64) -> Result<Graph<S>, GraphError> {
    for (name, r) in [("edge_drop", edge_drop), ("feature_mask", feature_mask)] {
        if !(0.0..=1.0).contains(&r) {
            return Err(GraphError::InvalidConfig(format!("{name} {r} outside [0, 1]")));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let edges: Vec<(usize, usize)> = g.edges().iter().copied().filter(|_| rng.random::<f64>() >= edge_drop).collect();
    let masked: Vec<bool> = (0..g.feature_dim()).map(|_| rng.random::<f64>() < feature_mask).collect();
    let mut features = g.features().clone();
    if masked.iter().any(|&m| m) {
        for r in 0..features.rows() {
            for (v, &m) in features.row_mut(r).iter_mut().zip(&masked) {
                if m {
                    *v = S::zero();
                }
            }
        }
    }
    Graph::new(features, edges, Some(g.labels().to_vec()), g.num_classes())
}

/// Disjoint positive edge sets in a 1:1:2 ratio plus an equal number of
/// sampled non-edges for each.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeSplit {
    pub train: Vec<(usize, usize)>,
    pub val: Vec<(usize, usize)>,
    pub test: Vec<(usize, usize)>,
    pub train_neg: Vec<(usize, usize)>,
    pub val_neg: Vec<(usize, usize)>,
    pub test_neg: Vec<(usize, usize)>,
}

pub fn split_edges<S: Scalar>(g: &Graph<S>, seed: u64) -> Result<EdgeSplit, GraphError> {
    let e = g.edges().len();
    if e < 4 {
        return Err(GraphError::TooFewEdges(e));
    }
    let n = g.num_nodes();
    let total_pairs = n * (n - 1) / 2;
    let available = total_pairs - e;
    if available < e {
        return Err(GraphError::NotEnoughNonEdges { available, needed: e });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut edges = g.edges().to_vec();
    edges.shuffle(&mut rng);
    let n_train = e / 4;
    let n_val = e / 4;
    let test = edges.split_off(n_train + n_val);
    let val = edges.split_off(n_train);
    let train = edges;

    let existing = g.edge_set();
    let mut chosen = HashSet::with_capacity(e);
    let mut negatives = Vec::with_capacity(e);
    while negatives.len() < e {
        let u = rng.random_range(0..n);
        let v = rng.random_range(0..n);
        if u == v {
            continue;
        }
        let pair = (u.min(v), u.max(v));
        if existing.contains(&pair) || !chosen.insert(pair) {
            continue;
        }
        negatives.push(pair);
    }
    let test_neg = negatives.split_off(n_train + n_val);
    let val_neg = negatives.split_off(n_train);
    let train_neg = negatives;
    Ok(EdgeSplit { train, val, test, train_neg, val_neg, test_neg })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{generate_sbm, normalize_adjacency, SbmConfig};
    use crate::tensor::Matrix;

    fn sbm() -> Graph<f64> {
        let cfg = SbmConfig { blocks: 2, nodes_per_block: 20, ..SbmConfig::default() };
        generate_sbm(&cfg, 3).unwrap()
    }

    #[test]
    fn zero_noise_is_identity() {
        let labels: Labels = (0..50).map(|i| Some(i % 3)).collect();
        assert_eq!(inject_label_noise(&labels, 0.0, 3, 1).unwrap(), labels);
    }

    #[test]
    fn full_noise_changes_every_label() {
        let labels: Labels = (0..50).map(|i| Some(i % 3)).collect();
        let noisy = inject_label_noise(&labels, 1.0, 3, 1).unwrap();
        assert!(labels.iter().zip(&noisy).all(|(a, b)| a != b));
    }

    #[test]
    fn half_noise_changes_exactly_half() {
        let labels: Labels = (0..100).map(|i| Some(i % 4)).collect();
        let noisy = inject_label_noise(&labels, 0.5, 4, 9).unwrap();
        assert_eq!(labels.iter().zip(&noisy).filter(|(a, b)| a != b).count(), 50);
    }

    #[test]
    fn noise_skips_unlabeled_and_needs_two_classes() {
        let labels: Labels = vec![Some(0), None, Some(0), None];
        let noisy = inject_label_noise(&labels, 1.0, 2, 0).unwrap();
        assert_eq!(noisy, vec![Some(1), None, Some(1), None]);
        assert!(inject_label_noise(&[Some(0), Some(0)], 0.5, 1, 0).is_err());
    }

    #[test]
    fn single_partition_is_identity() {
        let g = sbm();
        let parts = partition_sources(&g, 1, 4).unwrap();
        assert_eq!(parts.len(), 1);
        assert_eq!(parts[0].graph, g);
        assert_eq!(parts[0].original_ids, (0..g.num_nodes()).collect::<Vec<_>>());
    }

    #[test]
    fn three_way_partition_of_nine() {
        let g = Graph::<f64>::new(Matrix::zeros(9, 2), vec![(0, 1), (2, 3), (4, 8)], None, None).unwrap();
        let parts = partition_sources(&g, 3, 77).unwrap();
        let mut all: Vec<usize> = parts.iter().flat_map(|p| p.original_ids.clone()).collect();
        assert!(parts.iter().all(|p| p.graph.num_nodes() == 3));
        all.sort_unstable();
        assert_eq!(all, (0..9).collect::<Vec<_>>());
    }

    #[test]
    fn too_many_parts() {
        let g = Graph::<f64>::new(Matrix::zeros(2, 1), vec![], None, None).unwrap();
        assert!(matches!(partition_sources(&g, 3, 0), Err(GraphError::TooManyParts { .. })));
    }

    #[test]
    fn augment_identity_and_extremes() {
        let g = sbm();
        assert_eq!(augment(&g, 0.0, 0.0, 5).unwrap(), g);
        let masked = augment(&g, 0.0, 1.0, 5).unwrap();
        assert!(masked.features().data().iter().all(|&v| v == 0.0));
        let dropped = augment(&g, 1.0, 0.0, 5).unwrap();
        assert!(dropped.edges().is_empty());
        let a = normalize_adjacency(&dropped).csr().to_dense();
        assert_eq!(a, Matrix::identity(g.num_nodes()));
    }

    #[test]
    fn augment_is_pure() {
        let g = sbm();
        assert_eq!(augment(&g, 0.2, 0.2, 8).unwrap(), augment(&g, 0.2, 0.2, 8).unwrap());
    }

    #[test]
    fn eight_edges_split_two_two_four() {
        let edges = vec![(0, 1), (1, 2), (2, 3), (3, 4), (4, 5), (5, 6), (6, 7), (7, 0)];
        let g = Graph::<f64>::new(Matrix::zeros(8, 1), edges, None, None).unwrap();
        let s = split_edges(&g, 1).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (2, 2, 4));
        assert_eq!((s.train_neg.len(), s.val_neg.len(), s.test_neg.len()), (2, 2, 4));
    }

    #[test]
    fn split_needs_four_edges() {
        let g = Graph::<f64>::new(Matrix::zeros(4, 1), vec![(0, 1), (1, 2), (2, 3)], None, None).unwrap();
        assert!(matches!(split_edges(&g, 0), Err(GraphError::TooFewEdges(3))));
    }
}
