//! Prediction heads on a frozen backbone: node classification with a
//! linear softmax head, link prediction with a logistic head over the
//! Hadamard product of endpoint embeddings, and their metrics.

use std::cmp::Ordering;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::encoder::{encode, encode_on_tape, glorot, init_encoder, EncoderConfig, EncoderParams, EncoderVars};
use crate::error::{Error, Result};
use crate::graph::{normalize_adjacency, EdgeSplit, Graph};
use crate::scalar::Scalar;
use crate::tensor::{Matrix, Tape};

/// Linear head: `w` is `e x out`, `b` is `1 x out`. A node head has one
/// output per class; a link head has a single output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = "S: Deserialize<'de>"))]
pub struct HeadParams<S> {
    pub w: Matrix<S>,
    pub b: Matrix<S>,
}

impl<S: Scalar> HeadParams<S> {
    /// Glorot-uniform weights and zero bias.
    pub fn init(embed_dim: usize, outputs: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self { w: glorot(&mut rng, embed_dim, outputs), b: Matrix::zeros(1, outputs) }
    }

    pub fn embed_dim(&self) -> usize {
        self.w.rows()
    }

    pub fn outputs(&self) -> usize {
        self.w.cols()
    }

    pub fn is_finite(&self) -> bool {
        self.w.is_finite() && self.b.is_finite()
    }

    /// `z · w + b` for every row of `z`.
    pub fn logits(&self, z: &Matrix<S>) -> Result<Matrix<S>> {
        let mut out = z.matmul(&self.w)?;
        for r in 0..out.rows() {
            for (o, &b) in out.row_mut(r).iter_mut().zip(self.b.row(0)) {
                *o += b;
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Node,
    Link,
}

impl Task {
    pub fn as_str(self) -> &'static str {
        match self {
            Task::Node => "node",
            Task::Link => "link",
        }
    }
}

/// One evaluated metric, serialized as a line of `results.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub dataset: String,
    pub task: Task,
    pub metric: String,
    pub value: f64,
    pub n_eval: usize,
    pub noise_rate: f64,
    pub sources: usize,
    pub seed: u64,
    #[serde(default)]
    pub config: serde_json::Value,
}

impl EvalReport {
    pub fn new(task: Task, metric: &str, value: f64, n_eval: usize) -> Self {
        Self {
            dataset: String::new(),
            task,
            metric: metric.to_string(),
            value,
            n_eval,
            noise_rate: 0.0,
            sources: 1,
            seed: 0,
            config: serde_json::Value::Null,
        }
    }

    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("report serializes")
    }

    pub const CSV_HEADER: &'static str = "dataset,task,noise_rate,sources,seed,metric,value";

    pub fn to_csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.dataset,
            self.task.as_str(),
            self.noise_rate,
            self.sources,
            self.seed,
            self.metric,
            self.value
        )
    }
}

/// Up to `n_per_class` labeled nodes per class, drawn uniformly without
/// replacement. Classes with fewer nodes contribute all of them. The
/// result is sorted.
pub fn sample_few_shot(labels: &[Option<usize>], num_classes: usize, n_per_class: usize, seed: u64) -> Result<Vec<usize>> {
    if n_per_class == 0 {
        return Err(Error::InvalidArgument("n_per_class must be >= 1".into()));
    }
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); num_classes];
    for (i, l) in labels.iter().enumerate() {
        if let Some(c) = *l {
            let slot = members
                .get_mut(c)
                .ok_or_else(|| Error::InvalidArgument(format!("node {i} label {c} >= {num_classes}")))?;
            slot.push(i);
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for (c, m) in members.iter().enumerate() {
        if m.is_empty() {
            return Err(Error::InvalidArgument(format!("class {c} has no labeled node to sample")));
        }
        let take = n_per_class.min(m.len());
        out.extend(index::sample(&mut rng, m.len(), take).into_iter().map(|j| m[j]));
    }
    out.sort_unstable();
    Ok(out)
}

fn labeled_targets<S: Scalar>(labels: &[Option<usize>], idx: &[usize], classes: usize) -> Result<Matrix<S>> {
    let mut t = Matrix::zeros(idx.len(), classes);
    for (r, &i) in idx.iter().enumerate() {
        match labels.get(i).copied().flatten() {
            Some(c) if c < classes => t.set(r, c, S::one()),
            Some(c) => return Err(Error::InvalidArgument(format!("node {i} label {c} >= {classes}"))),
            None => return Err(Error::InvalidArgument(format!("node {i} is unlabeled"))),
        }
    }
    Ok(t)
}

/// Gradient descent on mean softmax cross-entropy over rows `idx` of the
/// fixed embeddings `z`.
pub fn train_node_head<S: Scalar>(
    z: &Matrix<S>,
    labels: &[Option<usize>],
    num_classes: usize,
    idx: &[usize],
    epochs: usize,
    lr: f64,
    seed: u64,
) -> Result<HeadParams<S>> {
    continue_node_head(HeadParams::init(z.cols(), num_classes, seed), z, labels, num_classes, idx, epochs, lr)
}

/// Continues gradient descent on an existing node head.
pub fn continue_node_head<S: Scalar>(
    mut head: HeadParams<S>,
    z: &Matrix<S>,
    labels: &[Option<usize>],
    num_classes: usize,
    idx: &[usize],
    epochs: usize,
    lr: f64,
) -> Result<HeadParams<S>> {
    if epochs == 0 {
        return Ok(head);
    }
    if head.outputs() != num_classes || head.embed_dim() != z.cols() {
        return Err(Error::InvalidArgument(format!(
            "head is {}x{} but embeddings have {} columns and {num_classes} classes",
            head.embed_dim(),
            head.outputs(),
            z.cols()
        )));
    }
    if idx.is_empty() {
        return Err(Error::InvalidArgument("no training nodes for the head".into()));
    }
    let target = labeled_targets::<S>(labels, idx, num_classes)?;
    let zt = z.select_rows(idx)?;
    let step = S::lit(lr);
    for epoch in 0..epochs {
        let mut tape = Tape::new();
        let x = tape.constant(zt.clone());
        let w = tape.var(head.w.clone());
        let b = tape.var(head.b.clone());
        let logits = tape.matmul(x, w)?;
        let logits = tape.add_row(logits, b)?;
        let loss = tape.softmax_cross_entropy(logits, &target)?;
        let grads = tape.backward(loss)?;
        head.w.axpy_neg(step, &grads.get_or_zeros(w, head.w.shape()))?;
        head.b.axpy_neg(step, &grads.get_or_zeros(b, head.b.shape()))?;
        if !head.is_finite() {
            return Err(Error::Training(format!("head diverged at epoch {epoch}; lower the learning rate")));
        }
    }
    Ok(head)
}

/// Embeds `g` once with the frozen backbone and trains a linear head on
/// the labeled nodes `train_idx`.
pub fn finetune_node_head<S: Scalar>(
    backbone: &EncoderParams<S>,
    g: &Graph<S>,
    train_idx: &[usize],
    epochs: usize,
    lr: f64,
    seed: u64,
) -> Result<HeadParams<S>> {
    let c = g.num_classes().ok_or_else(|| Error::InvalidArgument("graph has no class count".into()))?;
    let z = encode(backbone, &normalize_adjacency(g), g.features())?;
    train_node_head(&z, g.labels(), c, train_idx, epochs, lr, seed)
}

/// Fraction of rows `idx` whose argmax logit equals the label.
pub fn node_accuracy<S: Scalar>(
    z: &Matrix<S>,
    head: &HeadParams<S>,
    labels: &[Option<usize>],
    idx: &[usize],
) -> Result<f64> {
    if idx.is_empty() {
        return Err(Error::InvalidArgument("empty evaluation set".into()));
    }
    let pred = head.logits(&z.select_rows(idx)?)?.row_argmax();
    let mut correct = 0usize;
    for (&i, &p) in idx.iter().zip(&pred) {
        let y = labels
            .get(i)
            .copied()
            .flatten()
            .ok_or_else(|| Error::InvalidArgument(format!("evaluation node {i} is unlabeled")))?;
        if y == p {
            correct += 1;
        }
    }
    Ok(correct as f64 / idx.len() as f64)
}

pub fn evaluate_node<S: Scalar>(
    backbone: &EncoderParams<S>,
    head: &HeadParams<S>,
    g: &Graph<S>,
    test_idx: &[usize],
) -> Result<EvalReport> {
    if test_idx.is_empty() {
        return Err(Error::InvalidArgument("empty evaluation set".into()));
    }
    let z = encode(backbone, &normalize_adjacency(g), g.features())?;
    let acc = node_accuracy(&z, head, g.labels(), test_idx)?;
    Ok(EvalReport::new(Task::Node, "accuracy", acc, test_idx.len()))
}

fn pair_features<S: Scalar>(z: &Matrix<S>, pairs: &[(usize, usize)]) -> Matrix<S> {
    let mut h = Matrix::zeros(pairs.len(), z.cols());
    for (r, &(u, v)) in pairs.iter().enumerate() {
        for ((o, &a), &b) in h.row_mut(r).iter_mut().zip(z.row(u)).zip(z.row(v)) {
            *o = a * b;
        }
    }
    h
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Link scores `sigmoid(w·(z_u ⊙ z_v) + b)`.
pub fn link_scores<S: Scalar>(z: &Matrix<S>, head: &HeadParams<S>, pairs: &[(usize, usize)]) -> Result<Vec<f64>> {
    let logits = head.logits(&pair_features(z, pairs))?;
    Ok(logits.data().iter().map(|l| sigmoid(l.as_f64())).collect())
}

/// Embeddings for link prediction: message passing over training edges only.
pub fn link_embeddings<S: Scalar>(backbone: &EncoderParams<S>, g: &Graph<S>, split: &EdgeSplit) -> Result<Matrix<S>> {
    let train_graph = g.with_edges(split.train.clone())?;
    encode(backbone, &normalize_adjacency(&train_graph), g.features())
}

/// Mean logistic loss over positive and negative training pairs, trained
/// by gradient descent on the head only.
pub fn train_link_head<S: Scalar>(
    z: &Matrix<S>,
    pos: &[(usize, usize)],
    neg: &[(usize, usize)],
    epochs: usize,
    lr: f64,
    seed: u64,
) -> Result<HeadParams<S>> {
    let mut head = HeadParams::init(z.cols(), 1, seed);
    if epochs == 0 {
        return Ok(head);
    }
    let n = pos.len() + neg.len();
    if pos.is_empty() || neg.is_empty() {
        return Err(Error::InvalidArgument("link head needs positive and negative training pairs".into()));
    }
    let pairs: Vec<(usize, usize)> = pos.iter().chain(neg).copied().collect();
    let h = pair_features(z, &pairs);
    let y: Vec<f64> = (0..n).map(|i| if i < pos.len() { 1.0 } else { 0.0 }).collect();
    let inv_n = 1.0 / n as f64;
    for epoch in 0..epochs {
        let logits = head.logits(&h)?;
        let mut gw = Matrix::zeros(h.cols(), 1);
        let mut gb = S::zero();
        for r in 0..n {
            let d = S::lit((sigmoid(logits.get(r, 0).as_f64()) - y[r]) * inv_n);
            for (g, &x) in gw.data_mut().iter_mut().zip(h.row(r)) {
                *g += d * x;
            }
            gb += d;
        }
        head.w.axpy_neg(S::lit(lr), &gw)?;
        let b = head.b.get(0, 0) - S::lit(lr) * gb;
        head.b.set(0, 0, b);
        if !head.is_finite() {
            return Err(Error::Training(format!("link head diverged at epoch {epoch}; lower the learning rate")));
        }
    }
    Ok(head)
}

pub fn finetune_link_head<S: Scalar>(
    backbone: &EncoderParams<S>,
    g: &Graph<S>,
    split: &EdgeSplit,
    epochs: usize,
    lr: f64,
    seed: u64,
) -> Result<HeadParams<S>> {
    let z = link_embeddings(backbone, g, split)?;
    train_link_head(&z, &split.train, &split.train_neg, epochs, lr, seed)
}

/// AUROC of test edges against test non-edges.
pub fn evaluate_link<S: Scalar>(
    backbone: &EncoderParams<S>,
    head: &HeadParams<S>,
    g: &Graph<S>,
    split: &EdgeSplit,
) -> Result<EvalReport> {
    let z = link_embeddings(backbone, g, split)?;
    let mut scores = link_scores(&z, head, &split.test)?;
    scores.extend(link_scores(&z, head, &split.test_neg)?);
    let labels: Vec<bool> = (0..scores.len()).map(|i| i < split.test.len()).collect();
    let value = auroc(&scores, &labels)?;
    Ok(EvalReport::new(Task::Link, "auroc", value, scores.len()))
}

/// Probability that a random positive outscores a random negative, ties
/// counting one half. Computed from integer doubled mid-ranks, so the
/// result is the same double as exhaustive pair counting.
pub fn auroc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::InvalidArgument(format!("{} scores for {} labels", scores.len(), labels.len())));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::InvalidArgument("NaN score".into()));
    }
    let pos = labels.iter().filter(|&&l| l).count() as u128;
    let neg = labels.len() as u128 - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::InvalidArgument("AUROC needs at least one positive and one negative".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap_or(Ordering::Equal));
    // sum over positives of twice the 1-based mid-rank
    let mut rank2_sum: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let mid2 = (i + j + 2) as u128;
        let tied_pos = order[i..=j].iter().filter(|&&k| labels[k]).count() as u128;
        rank2_sum += mid2 * tied_pos;
        i = j + 1;
    }
    // 2U = 2R - P(P+1)
    let u2 = rank2_sum - pos * (pos + 1);
    Ok(u2 as f64 / (2 * pos * neg) as f64)
}

/// Reference model for fidelity comparisons: encoder and linear head
/// trained jointly on the labeled nodes `train_idx` of the full graph.
pub fn train_supervised_encoder<S: Scalar>(
    g: &Graph<S>,
    train_idx: &[usize],
    enc_cfg: &EncoderConfig,
    epochs: usize,
    lr: f64,
) -> Result<(EncoderParams<S>, HeadParams<S>)> {
    let c = g.num_classes().ok_or_else(|| Error::InvalidArgument("graph has no class count".into()))?;
    let target = labeled_targets::<S>(g.labels(), train_idx, c)?;
    let adj = normalize_adjacency(g);
    let mut enc = init_encoder::<S>(g.feature_dim(), enc_cfg)?;
    let mut head = HeadParams::init(enc_cfg.embed_dim, c, enc_cfg.seed.wrapping_add(1));
    let step = S::lit(lr);
    for epoch in 0..epochs {
        let mut tape = Tape::new();
        let w = EncoderVars::trainable(&mut tape, &enc);
        let x = tape.constant(g.features().clone());
        let z = encode_on_tape(&mut tape, w, &adj, x)?;
        let z = tape.select_rows(z, train_idx)?;
        let hw = tape.var(head.w.clone());
        let hb = tape.var(head.b.clone());
        let logits = tape.matmul(z, hw)?;
        let logits = tape.add_row(logits, hb)?;
        let loss = tape.softmax_cross_entropy(logits, &target)?;
        let grads = tape.backward(loss)?;
        enc.w1.axpy_neg(step, &grads.get_or_zeros(w.w1, enc.w1.shape()))?;
        enc.w2.axpy_neg(step, &grads.get_or_zeros(w.w2, enc.w2.shape()))?;
        head.w.axpy_neg(step, &grads.get_or_zeros(hw, head.w.shape()))?;
        head.b.axpy_neg(step, &grads.get_or_zeros(hb, head.b.shape()))?;
        if !enc.is_finite() || !head.is_finite() {
            return Err(Error::Training(format!("supervised encoder diverged at epoch {epoch}; lower the learning rate")));
        }
    }
    Ok((enc, head))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pairs_oracle(scores: &[f64], labels: &[bool]) -> f64 {
        let (mut num, mut den) = (0u64, 0u64);
        for (i, &a) in scores.iter().enumerate() {
            for (j, &b) in scores.iter().enumerate() {
                if labels[i] && !labels[j] {
                    den += 2;
                    num += if a > b { 2 } else if a == b { 1 } else { 0 };
                }
            }
        }
        num as f64 / den as f64
    }

    #[test]
    fn auroc_named_cases() {
        assert_eq!(auroc(&[0.9, 0.1], &[true, false]).unwrap(), 1.0);
        assert_eq!(auroc(&[0.3; 6], &[true, false, true, false, false, true]).unwrap(), 0.5);
        assert_eq!(auroc(&[0.8, 0.4, 0.6], &[true, true, false]).unwrap(), 0.5);
        assert!(auroc(&[0.1, 0.2], &[true, true]).is_err());
    }

    #[test]
    fn auroc_random_case_matches_pairs() {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(50);
        let scores: Vec<f64> = (0..50).map(|_| (rng.random_range(0..12) as f64) / 4.0).collect();
        let mut labels: Vec<bool> = (0..50).map(|_| rng.random_bool(0.4)).collect();
        labels[0] = true;
        labels[1] = false;
        assert_eq!(auroc(&scores, &labels).unwrap(), pairs_oracle(&scores, &labels));
    }

    #[test]
    fn few_shot_counts() {
        let labels: Vec<Option<usize>> = (0..12).map(|i| if i == 11 { None } else { Some(i % 3) }).collect();
        let s = sample_few_shot(&labels, 3, 3, 4).unwrap();
        assert_eq!(s.len(), 9);
        assert_eq!(s, sample_few_shot(&labels, 3, 3, 4).unwrap());
        let all = sample_few_shot(&labels, 3, 10, 4).unwrap();
        assert_eq!(all, (0..11).collect::<Vec<_>>());
        assert!(sample_few_shot(&labels, 4, 1, 0).is_err());
    }

    #[test]
    fn hand_built_accuracy() {
        // head = identity on 2-dim embeddings; predictions [0,1,0,1,1]
        let z = Matrix::<f64>::from_rows(&[&[1.0, 0.0], &[0.0, 1.0], &[1.0, 0.0], &[0.0, 1.0], &[0.2, 0.9]]).unwrap();
        let head = HeadParams { w: Matrix::identity(2), b: Matrix::zeros(1, 2) };
        let labels = vec![Some(0), Some(1), Some(1), Some(0), Some(1)];
        assert_eq!(node_accuracy(&z, &head, &labels, &[0, 1, 2, 3, 4]).unwrap(), 0.6);
        assert!(node_accuracy(&z, &head, &labels, &[]).is_err());
    }

    #[test]
    fn constant_head_on_balanced_labels() {
        let z = Matrix::<f64>::filled(4, 3, 0.5);
        let head = HeadParams { w: Matrix::zeros(3, 2), b: Matrix::zeros(1, 2) };
        let labels = vec![Some(0), Some(1), Some(0), Some(1)];
        assert_eq!(node_accuracy(&z, &head, &labels, &[0, 1, 2, 3]).unwrap(), 0.5);
    }

    #[test]
    fn zero_epochs_is_seeded_init() {
        let z = Matrix::<f64>::filled(3, 4, 0.5);
        let labels = vec![Some(0), Some(1), Some(0)];
        let h = train_node_head(&z, &labels, 2, &[0, 1], 0, 0.1, 9).unwrap();
        assert_eq!(h, HeadParams::init(4, 2, 9));
    }

    #[test]
    fn csv_row_layout() {
        let mut r = EvalReport::new(Task::Node, "accuracy", 0.75, 8);
        r.dataset = "sbm".into();
        r.noise_rate = 0.3;
        r.sources = 3;
        r.seed = 2;
        assert_eq!(r.to_csv_row(), "sbm,node,0.3,3,2,accuracy,0.75");
        let back: EvalReport = serde_json::from_str(&r.to_json_line()).unwrap();
        assert_eq!(back, r);
    }
}
