use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::scalar::Scalar;
use crate::tensor::Matrix;

use super::{Graph, GraphError};

/// Planted-partition graph with Gaussian node features around per-block
/// centers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SbmConfig {
    pub blocks: usize,
    pub nodes_per_block: usize,
    pub p_in: f64,
    pub p_out: f64,
    pub feature_dim: usize,
    /// Minimum pairwise distance between block centers.
    pub center_separation: f64,
    /// Standard deviation of the isotropic feature noise.
    pub feature_noise: f64,
}

impl Default for SbmConfig {
    fn default() -> Self {
        Self {
            blocks: 3,
            nodes_per_block: 100,
            p_in: 0.3,
            p_out: 0.02,
            feature_dim: 16,
            center_separation: 6.0,
            feature_noise: 1.0,
        }
    }
}

impl SbmConfig {
    pub fn validate(&self) -> Result<(), GraphError> {
        let bad = |m: String| Err(GraphError::InvalidConfig(m));
        if self.blocks == 0 || self.nodes_per_block == 0 || self.feature_dim == 0 {
            return bad("blocks, nodes_per_block and feature_dim must be >= 1".into());
        }
        if !(0.0 <= self.p_out && self.p_out <= self.p_in && self.p_in <= 1.0) {
            return bad(format!("need 0 <= p_out <= p_in <= 1, got p_in={} p_out={}", self.p_in, self.p_out));
        }
        if !(self.center_separation >= 0.0 && self.center_separation.is_finite()) {
            return bad("center_separation must be finite and >= 0".into());
        }
        if !(self.feature_noise >= 0.0 && self.feature_noise.is_finite()) {
            return bad("feature_noise must be finite and >= 0".into());
        }
        Ok(())
    }

    pub fn num_nodes(&self) -> usize {
        self.blocks * self.nodes_per_block
    }
}

/// Block centers with pairwise distance at least `separation`.
///
/// With `dim >= k` the centers are scaled basis vectors (all pairwise
/// distances equal `separation`); otherwise they sit on a regular polygon
/// in the first two coordinates, or on a line when `dim == 1`.
pub fn block_centers(k: usize, dim: usize, separation: f64) -> Matrix<f64> {
    let mut c = Matrix::zeros(k, dim);
    if k <= 1 {
        return c;
    }
    if dim >= k {
        let s = separation / std::f64::consts::SQRT_2;
        for i in 0..k {
            c.set(i, i, s);
        }
    } else if dim >= 2 {
        let theta = std::f64::consts::PI / k as f64;
        let radius = separation / (2.0 * theta.sin());
        for i in 0..k {
            let a = 2.0 * theta * i as f64;
            c.set(i, 0, radius * a.cos());
            c.set(i, 1, radius * a.sin());
        }
    } else {
        for i in 0..k {
            c.set(i, 0, separation * i as f64);
        }
    }
    c
}

/// Samples a graph from `cfg`. Nodes are numbered block by block; labels
/// are block ids.
pub fn generate_sbm<S: Scalar>(cfg: &SbmConfig, seed: u64) -> Result<Graph<S>, GraphError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = cfg.num_nodes();
    let block = |i: usize| i / cfg.nodes_per_block;

    let mut edges = Vec::new();
    for u in 0..n {
        for v in (u + 1)..n {
            let p = if block(u) == block(v) { cfg.p_in } else { cfg.p_out };
            if rng.random::<f64>() < p {
                edges.push((u, v));
            }
        }
    }

    let centers = block_centers(cfg.blocks, cfg.feature_dim, cfg.center_separation);
    let noise = Normal::new(0.0, cfg.feature_noise.max(f64::MIN_POSITIVE)).expect("finite std");
    let mut features = Matrix::zeros(n, cfg.feature_dim);
    for i in 0..n {
        let center = centers.row(block(i));
        for (j, &c) in center.iter().enumerate() {
            let v = if cfg.feature_noise > 0.0 { c + noise.sample(&mut rng) } else { c };
            features.set(i, j, S::lit(v));
        }
    }
    let labels = (0..n).map(|i| Some(block(i))).collect();
    Graph::new(features, edges, Some(labels), Some(cfg.blocks))
}
