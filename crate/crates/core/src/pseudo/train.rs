use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::encoder::{encode, encode_on_tape, init_encoder, EncoderConfig, EncoderVars};
use crate::error::{Error, Result};
use crate::graph::{augment, normalize_adjacency, Graph};
use crate::scalar::Scalar;
use crate::tensor::{Matrix, Tape};

use super::{
    normalize_bank, round_assignment, sinkhorn_assign, Assignment, PrototypeBank, PseudoLabelResult, SinkhornConfig,
};

/// Graphs up to this many nodes are assigned in a single batch.
const FULL_BATCH_LIMIT: usize = 5000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PseudoLabelConfig {
    /// Number of prototypes.
    pub k: usize,
    pub epochs: usize,
    pub lr_encoder: f64,
    pub lr_bank: f64,
    pub tau: f64,
    pub sinkhorn: SinkhornConfig,
    pub edge_drop: f64,
    pub feature_mask: f64,
    pub encoder: EncoderConfig,
    pub seed: u64,
}

impl Default for PseudoLabelConfig {
    fn default() -> Self {
        Self {
            k: 3,
            epochs: 50,
            lr_encoder: 0.01,
            lr_bank: 0.05,
            tau: 0.1,
            sinkhorn: SinkhornConfig::default(),
            edge_drop: 0.2,
            feature_mask: 0.2,
            encoder: EncoderConfig::default(),
            seed: 0,
        }
    }
}

fn batch_indices(n: usize, k: usize, cfg: &SinkhornConfig, rng: &mut ChaCha8Rng) -> Option<Vec<usize>> {
    let size = match cfg.batch_size {
        Some(b) if b < n => b,
        Some(_) => return None,
        None if n <= FULL_BATCH_LIMIT => return None,
        None => FULL_BATCH_LIMIT,
    };
    let size = (size / k).max(1) * k;
    let mut idx = index::sample(rng, n, size.min(n)).into_vec();
    idx.sort_unstable();
    Some(idx)
}

/// Gives every empty prototype the node with the most soft mass for it,
/// taken from a prototype that keeps at least one node.
fn fill_empty_prototypes<S: Scalar>(hard: &mut [usize], soft: &Matrix<S>) -> Result<()> {
    let k = soft.cols();
    let mut counts = vec![0usize; k];
    for &c in hard.iter() {
        counts[c] += 1;
    }
    for target in 0..k {
        if counts[target] > 0 {
            continue;
        }
        let mut best: Option<usize> = None;
        for i in 0..hard.len() {
            if counts[hard[i]] <= 1 {
                continue;
            }
            if best.is_none_or(|b| soft.get(i, target) > soft.get(b, target)) {
                best = Some(i);
            }
        }
        let Some(i) = best else {
            return Err(Error::Training(format!("prototype {target} has no assigned node and none can be moved")));
        };
        log::debug!("prototype {target} empty; reassigning node {i}");
        counts[hard[i]] -= 1;
        hard[i] = target;
        counts[target] += 1;
    }
    Ok(())
}

/// Jointly trains the encoder and prototypes with the two-view swapped
/// loss, then assigns every node of the unaugmented graph.
///
/// Each epoch draws two augmented views, encodes both, computes each
/// view's balanced hard assignment with the current prototypes, and takes
/// one gradient step on `ℓ(Z_a, Q_b) + ℓ(Z_b, Q_a)` followed by
/// re-normalization of the prototypes.
pub fn train_pseudo_labels<S: Scalar>(g: &Graph<S>, cfg: &PseudoLabelConfig) -> Result<PseudoLabelResult<S>> {
    let n = g.num_nodes();
    if cfg.k == 0 || cfg.k > n {
        return Err(Error::InvalidArgument(format!("need 1 <= K <= N, got K = {} for N = {n}", cfg.k)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut encoder = init_encoder::<S>(g.feature_dim(), &cfg.encoder)?;
    let mut bank = PrototypeBank::<S>::random(cfg.k, cfg.encoder.embed_dim, rng.random())?;
    let lr_enc = S::lit(cfg.lr_encoder);
    let lr_bank = S::lit(cfg.lr_bank);
    let inv_tau = S::lit(1.0 / cfg.tau);
    if !(cfg.tau > 0.0) {
        return Err(Error::InvalidArgument(format!("temperature must be positive, got {}", cfg.tau)));
    }

    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let view_a = augment(g, cfg.edge_drop, cfg.feature_mask, rng.random())?;
        let view_b = augment(g, cfg.edge_drop, cfg.feature_mask, rng.random())?;
        let batch = batch_indices(n, cfg.k, &cfg.sinkhorn, &mut rng);
        let adj_a = normalize_adjacency(&view_a);
        let adj_b = normalize_adjacency(&view_b);

        let mut tape = Tape::new();
        let w = EncoderVars::trainable(&mut tape, &encoder);
        let protos = tape.var(bank.protos().clone());
        let xa = tape.constant(view_a.features().clone());
        let xb = tape.constant(view_b.features().clone());
        let mut za = encode_on_tape(&mut tape, w, &adj_a, xa)?;
        let mut zb = encode_on_tape(&mut tape, w, &adj_b, xb)?;
        if let Some(idx) = &batch {
            za = tape.select_rows(za, idx)?;
            zb = tape.select_rows(zb, idx)?;
        }

        let qa = round_assignment(&sinkhorn_assign(tape.value(za), &bank, &cfg.sinkhorn)?);
        let qb = round_assignment(&sinkhorn_assign(tape.value(zb), &bank, &cfg.sinkhorn)?);

        let pt = tape.transpose(protos)?;
        let la = tape.matmul(za, pt)?;
        let la = tape.scale(la, inv_tau)?;
        let lb = tape.matmul(zb, pt)?;
        let lb = tape.scale(lb, inv_tau)?;
        let loss_a = tape.softmax_cross_entropy(la, qb.matrix())?;
        let loss_b = tape.softmax_cross_entropy(lb, qa.matrix())?;
        let loss = tape.add(loss_a, loss_b)?;
        let value = tape.value(loss).get(0, 0).as_f64();
        history.push(value);
        log::debug!("pseudo-label epoch {epoch}: swapped loss {value:.6}");

        let grads = tape.backward(loss)?;
        if let Some(gw) = grads.get(w.w1) {
            encoder.w1.axpy_neg(lr_enc, gw)?;
        }
        if let Some(gw) = grads.get(w.w2) {
            encoder.w2.axpy_neg(lr_enc, gw)?;
        }
        let mut rows = bank.protos().clone();
        if let Some(gb) = grads.get(protos) {
            rows.axpy_neg(lr_bank, gb)?;
        }
        bank = normalize_bank(&rows)?;
        if !encoder.is_finite() {
            return Err(Error::Training(format!("encoder weights diverged at epoch {epoch}; lower the learning rate")));
        }
    }

    let adj = normalize_adjacency(g);
    let z = encode(&encoder, &adj, g.features())?;
    let full_cfg = SinkhornConfig { batch_size: None, ..cfg.sinkhorn };
    let soft = sinkhorn_assign(&z, &bank, &full_cfg)?;
    let mut hard = soft.indices();
    fill_empty_prototypes(&mut hard, soft.matrix())?;
    let q_full = Assignment::from_indices(&hard, cfg.k)?;
    Ok(PseudoLabelResult { encoder, bank, q_full, loss_history: history })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_prototype_gets_best_node() {
        let soft = Matrix::<f64>::from_rows(&[&[0.3, 0.0, 0.1], &[0.3, 0.0, 0.2], &[0.2, 0.1, 0.0]]).unwrap();
        let mut hard = vec![0, 0, 0];
        fill_empty_prototypes(&mut hard, &soft).unwrap();
        assert_eq!(hard, vec![0, 2, 1]);
    }

    #[test]
    fn k_larger_than_n_rejected() {
        let g = Graph::<f64>::new(Matrix::filled(2, 2, 1.0), vec![(0, 1)], None, None).unwrap();
        let cfg = PseudoLabelConfig { k: 3, ..PseudoLabelConfig::default() };
        assert!(train_pseudo_labels(&g, &cfg).is_err());
    }
}
