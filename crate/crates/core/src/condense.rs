//! Condensed-graph synthesis by prototype matching, backbone
//! reconstruction from condensed sets, and a supervised class-mean
//! matching comparator.
//!
//! A condensed graph has one synthetic node per prototype and no stored
//! edges; its propagation operator is the identity.

use std::fs;
use std::io::BufReader;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::encoder::{encode, encode_on_tape, init_encoder, EncoderConfig, EncoderParams, EncoderVars};
use crate::error::{Error, Result};
use crate::fsutil::write_atomic;
use crate::graph::{normalize_adjacency, Graph, NormalizedAdjacency};
use crate::pseudo::{Assignment, PrototypeBank};
use crate::scalar::Scalar;
use crate::tensor::{read_matrix_tsv, write_matrix_tsv, Matrix, Reduction, Tape, TensorError, Var};

/// Step halvings tried before a step is abandoned.
const MAX_HALVINGS: usize = 40;

/// Synthetic features `X'` paired row-for-row with prototypes.
#[derive(Debug, Clone, PartialEq)]
pub struct CondensedGraph<S> {
    pub features: Matrix<S>,
    pub bank: PrototypeBank<S>,
    pub source_id: String,
    pub final_loss: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct CondensedMeta {
    #[serde(rename = "K")]
    k: usize,
    d: usize,
    embed_dim: usize,
    source_id: String,
    final_loss: f64,
}

impl<S: Scalar> CondensedGraph<S> {
    pub fn k(&self) -> usize {
        self.features.rows()
    }

    /// Writes `features.tsv`, `prototypes.tsv` and `meta.json`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut buf = Vec::new();
        write_matrix_tsv(&self.features, &mut buf).expect("vec write");
        let p = dir.join("features.tsv");
        write_atomic(&p, &buf).map_err(|e| Error::io(&p, e))?;
        self.bank.save_tsv(&dir.join("prototypes.tsv"))?;
        let meta = CondensedMeta {
            k: self.k(),
            d: self.features.cols(),
            embed_dim: self.bank.dim(),
            source_id: self.source_id.clone(),
            final_loss: self.final_loss,
        };
        let p = dir.join("meta.json");
        write_atomic(&p, &serde_json::to_vec_pretty(&meta).expect("meta serializes")).map_err(|e| Error::io(&p, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let p = dir.join("meta.json");
        let text = fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
        let meta: CondensedMeta = serde_json::from_str(&text).map_err(|e| Error::artifact(&p, e.to_string()))?;
        let p = dir.join("features.tsv");
        let file = fs::File::open(&p).map_err(|e| Error::io(&p, e))?;
        let features: Matrix<S> = read_matrix_tsv(BufReader::new(file)).map_err(|e| Error::artifact(&p, e.to_string()))?;
        let bank = PrototypeBank::load_tsv(&dir.join("prototypes.tsv"))?;
        if features.rows() != meta.k || bank.k() != meta.k || features.cols() != meta.d || bank.dim() != meta.embed_dim {
            return Err(Error::artifact(dir, "condensed artifact shapes disagree with meta.json"));
        }
        Ok(Self { features, bank, source_id: meta.source_id, final_loss: meta.final_loss })
    }
}

/// Row `k` is the mean original feature vector of the nodes assigned to
/// prototype `k`.
pub fn init_condensed<S: Scalar>(g: &Graph<S>, q: &Assignment<S>, k: usize) -> Result<Matrix<S>> {
    if q.rows() != g.num_nodes() {
        return Err(Error::InvalidArgument(format!("{} assignment rows for {} nodes", q.rows(), g.num_nodes())));
    }
    let d = g.feature_dim();
    let idx = q.indices();
    // mean as first member plus the mean offset, exact when members agree
    let mut first: Vec<Option<usize>> = vec![None; k];
    let mut offsets = Matrix::<S>::zeros(k, d);
    let mut counts = vec![0usize; k];
    for (i, &c) in idx.iter().enumerate() {
        if c >= k {
            return Err(Error::InvalidArgument(format!("node {i} assigned to prototype {c} >= {k}")));
        }
        counts[c] += 1;
        let base = *first[c].get_or_insert(i);
        for ((s, &x), &x0) in offsets.row_mut(c).iter_mut().zip(g.features().row(i)).zip(g.features().row(base)) {
            *s += x - x0;
        }
    }
    let mut out = Matrix::zeros(k, d);
    for c in 0..k {
        let Some(base) = first[c] else {
            return Err(Error::Training(format!("prototype {c} has no assigned node")));
        };
        let n = S::from_usize(counts[c]).unwrap();
        for ((o, &off), &x0) in out.row_mut(c).iter_mut().zip(offsets.row(c)).zip(g.features().row(base)) {
            *o = x0 + off / n;
        }
    }
    Ok(out)
}

/// Outcome of a descent run: final point(s), loss before each step, and
/// the final loss.
#[derive(Debug, Clone)]
pub struct DescentTrace<S> {
    pub params: Vec<Matrix<S>>,
    pub history: Vec<f64>,
    pub final_loss: f64,
}

/// Gradient descent with step halving: a step whose loss would exceed the
/// current loss is retried at half the rate, up to `MAX_HALVINGS` times,
/// and the rate resets to `lr` on the next step. The loss sequence is
/// therefore non-increasing.
pub fn backtracking_descent<S, F>(init: Vec<Matrix<S>>, steps: usize, lr: f64, objective: F) -> Result<DescentTrace<S>>
where
    S: Scalar,
    F: Fn(&[Matrix<S>]) -> Result<(S, Vec<Matrix<S>>)>,
{
    let diverged = || Error::Training(format!("loss became non-finite at lr = {lr}; use a smaller learning rate"));
    let mut x = init;
    let (mut loss, mut grad) = objective(&x)?;
    if !loss.is_finite() {
        return Err(diverged());
    }
    let mut history = Vec::with_capacity(steps);
    for _ in 0..steps {
        history.push(loss.as_f64());
        let mut rate = lr;
        let mut accepted = false;
        for _ in 0..=MAX_HALVINGS {
            let mut cand = x.clone();
            for (c, g) in cand.iter_mut().zip(&grad) {
                c.axpy_neg(S::lit(rate), g)?;
            }
            let evaluated = if cand.iter().all(Matrix::is_finite) { Some(objective(&cand)?) } else { None };
            if let Some((l, g)) = evaluated {
                if l.is_finite() && l <= loss {
                    x = cand;
                    loss = l;
                    grad = g;
                    accepted = true;
                    break;
                }
            }
            rate *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    Ok(DescentTrace { params: x, history, final_loss: loss.as_f64() })
}

/// `Σ_k ||ỹ_k − encode(θ, I, X')_k||²` and its gradient in `X'`.
pub fn condensation_loss<S: Scalar>(
    features: &Matrix<S>,
    encoder: &EncoderParams<S>,
    bank: &PrototypeBank<S>,
) -> Result<(S, Matrix<S>)> {
    if features.rows() != bank.k() {
        return Err(Error::InvalidArgument(format!("{} condensed rows for {} prototypes", features.rows(), bank.k())));
    }
    let adj = NormalizedAdjacency::identity(features.rows());
    let mut tape = Tape::new();
    let w = EncoderVars::frozen(&mut tape, encoder);
    let x = tape.var(features.clone());
    let z = encode_on_tape(&mut tape, w, &adj, x)?;
    let loss = tape.squared_error(z, bank.protos(), Reduction::Sum)?;
    let value = tape.value(loss).get(0, 0);
    let grads = tape.backward(loss)?;
    Ok((value, grads.get_or_zeros(x, features.shape())))
}

/// Optimizes `X'` (encoder and prototypes frozen) so each synthetic node
/// embeds onto its prototype.
pub fn condense<S: Scalar>(
    init: Matrix<S>,
    encoder: &EncoderParams<S>,
    bank: &PrototypeBank<S>,
    steps: usize,
    lr: f64,
    source_id: impl Into<String>,
) -> Result<CondensedGraph<S>> {
    if encoder.embed_dim() != bank.dim() {
        return Err(Error::InvalidArgument(format!(
            "encoder embeds into {} dims but prototypes have {}",
            encoder.embed_dim(),
            bank.dim()
        )));
    }
    if init.cols() != encoder.input_dim() {
        return Err(Error::InvalidArgument(format!(
            "condensed features have {} columns, encoder expects {}",
            init.cols(),
            encoder.input_dim()
        )));
    }
    let trace = backtracking_descent(vec![init], steps, lr, |x| {
        let (l, g) = condensation_loss(&x[0], encoder, bank)?;
        Ok((l, vec![g]))
    })?;
    let features = trace.params.into_iter().next().expect("one parameter");
    Ok(CondensedGraph { features, bank: bank.clone(), source_id: source_id.into(), final_loss: trace.final_loss })
}

fn backbone_objective<S: Scalar>(params: &[Matrix<S>], sets: &[&CondensedGraph<S>]) -> Result<(S, Vec<Matrix<S>>)> {
    let adjs: Vec<NormalizedAdjacency<S>> = sets.iter().map(|s| NormalizedAdjacency::identity(s.k())).collect();
    let mut tape = Tape::new();
    let w = EncoderVars { w1: tape.var(params[0].clone()), w2: tape.var(params[1].clone()) };
    let mut total: Option<Var> = None;
    for (set, adj) in sets.iter().zip(&adjs) {
        let x = tape.constant(set.features.clone());
        let z = encode_on_tape(&mut tape, w, adj, x)?;
        let l = tape.squared_error(z, set.bank.protos(), Reduction::Sum)?;
        total = Some(match total {
            Some(t) => tape.add(t, l)?,
            None => l,
        });
    }
    let total = total.expect("at least one set");
    let value = tape.value(total).get(0, 0);
    let grads = tape.backward(total)?;
    Ok((value, vec![grads.get_or_zeros(w.w1, params[0].shape()), grads.get_or_zeros(w.w2, params[1].shape())]))
}

/// Trained backbone and its objective trace.
#[derive(Debug, Clone)]
pub struct Backbone<S> {
    pub params: EncoderParams<S>,
    pub initial_loss: f64,
    pub final_loss: f64,
    pub history: Vec<f64>,
}

/// Trains a fresh encoder (initialized from `seed`) so that every
/// condensed node of every set embeds onto its prototype. The step size
/// is `lr / M` for `M` sets, so duplicating a set leaves the iterates
/// unchanged.
pub fn reconstruct_backbone<S: Scalar>(
    sets: &[CondensedGraph<S>],
    enc_cfg: &EncoderConfig,
    epochs: usize,
    lr: f64,
    seed: u64,
) -> Result<Backbone<S>> {
    let first = sets.first().ok_or_else(|| Error::InvalidArgument("no condensed sets".into()))?;
    let (d, e) = (first.features.cols(), first.bank.dim());
    for s in sets {
        if s.features.cols() != d || s.bank.dim() != e || s.features.rows() != s.bank.k() {
            return Err(Error::InvalidArgument(format!(
                "condensed set {:?} has dims {}x{} / {} but expected {d} features and {e} embedding dims",
                s.source_id,
                s.features.rows(),
                s.features.cols(),
                s.bank.dim()
            )));
        }
    }
    if enc_cfg.embed_dim != e {
        return Err(Error::InvalidArgument(format!("encoder embed_dim {} != prototype dim {e}", enc_cfg.embed_dim)));
    }
    let init = init_encoder::<S>(d, &EncoderConfig { seed, ..*enc_cfg })?;
    let refs: Vec<&CondensedGraph<S>> = sets.iter().collect();
    let (initial, _) = backbone_objective(&[init.w1.clone(), init.w2.clone()], &refs)?;
    let trace = backtracking_descent(vec![init.w1, init.w2], epochs, lr / sets.len() as f64, |p| {
        backbone_objective(p, &refs)
    })?;
    let mut it = trace.params.into_iter();
    let params = EncoderParams { w1: it.next().expect("w1"), w2: it.next().expect("w2") };
    Ok(Backbone { params, initial_loss: initial.as_f64(), final_loss: trace.final_loss, history: trace.history })
}

/// Labeled synthetic set produced by class-mean matching.
#[derive(Debug, Clone)]
pub struct LabeledCondensed<S> {
    /// `C * per_class` synthetic rows, grouped by class.
    pub features: Matrix<S>,
    pub labels: Vec<usize>,
    /// Unit-normalized per-class mean embedding of the original graph
    /// under the given labels.
    pub targets: Matrix<S>,
    pub final_loss: f64,
}

impl<S: Scalar> LabeledCondensed<S> {
    /// Pairs every synthetic row with the target of its
    /// class so the set can feed [`reconstruct_backbone`].
    pub fn as_condensed(&self, source_id: impl Into<String>) -> Result<CondensedGraph<S>> {
        let bank = PrototypeBank::new(self.targets.select_rows(&self.labels)?)?;
        Ok(CondensedGraph {
            features: self.features.clone(),
            bank,
            source_id: source_id.into(),
            final_loss: self.final_loss,
        })
    }
}

/// Column mean of the rows `idx` of `z`, as a `1 x cols` variable.
fn row_mean<'a, S: Scalar>(tape: &mut Tape<'a, S>, z: Var, idx: &[usize]) -> std::result::Result<Var, TensorError> {
    let rows = tape.select_rows(z, idx)?;
    let t = tape.transpose(rows)?;
    let s = tape.row_sum(t)?;
    let s = tape.scale(s, S::one() / S::from_usize(idx.len()).unwrap())?;
    tape.transpose(s)
}

/// Supervised comparator: synthesizes `per_class` rows per class whose
/// mean embedding (through `encoder`, identity adjacency) matches the
/// direction of the mean embedding of the original nodes carrying that label.
pub fn supervised_baseline_condense<S: Scalar>(
    g: &Graph<S>,
    labels: &[Option<usize>],
    encoder: &EncoderParams<S>,
    per_class: usize,
    steps: usize,
    lr: f64,
) -> Result<LabeledCondensed<S>> {
    let c = g.num_classes().ok_or_else(|| Error::InvalidArgument("graph has no class count".into()))?;
    if per_class == 0 {
        return Err(Error::InvalidArgument("per_class must be >= 1".into()));
    }
    if labels.len() != g.num_nodes() {
        return Err(Error::InvalidArgument(format!("{} labels for {} nodes", labels.len(), g.num_nodes())));
    }
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); c];
    for (i, l) in labels.iter().enumerate() {
        if let Some(y) = *l {
            if y >= c {
                return Err(Error::InvalidArgument(format!("node {i} label {y} >= {c}")));
            }
            members[y].push(i);
        }
    }
    if let Some(empty) = members.iter().position(Vec::is_empty) {
        return Err(Error::InvalidArgument(format!("class {empty} has no labeled node")));
    }

    let z = encode(encoder, &normalize_adjacency(g), g.features())?;
    let d = g.feature_dim();
    let mut targets = Matrix::zeros(c, encoder.embed_dim());
    let mut init = Matrix::zeros(c * per_class, d);
    let mut syn_labels = Vec::with_capacity(c * per_class);
    for (y, idx) in members.iter().enumerate() {
        let inv = S::one() / S::from_usize(idx.len()).unwrap();
        let mut fmean = vec![S::zero(); d];
        for &i in idx {
            for (t, &v) in targets.row_mut(y).iter_mut().zip(z.row(i)) {
                *t += v * inv;
            }
            for (m, &v) in fmean.iter_mut().zip(g.features().row(i)) {
                *m += v * inv;
            }
        }
        for r in 0..per_class {
            init.row_mut(y * per_class + r).copy_from_slice(&fmean);
            syn_labels.push(y);
        }
    }

    let targets = crate::tensor::row_l2_normalize(&targets).map_err(|e| {
        Error::Training(format!("a class mean embedding vanished, cannot form a target: {e}"))
    })?;

    let groups: Vec<Vec<usize>> = (0..c).map(|y| (y * per_class..(y + 1) * per_class).collect()).collect();
    let adj = NormalizedAdjacency::identity(c * per_class);
    let objective = |x: &[Matrix<S>]| -> Result<(S, Vec<Matrix<S>>)> {
        let mut tape = Tape::new();
        let w = EncoderVars::frozen(&mut tape, encoder);
        let xv = tape.var(x[0].clone());
        let zs = encode_on_tape(&mut tape, w, &adj, xv)?;
        let mut total: Option<Var> = None;
        for (y, grp) in groups.iter().enumerate() {
            let m = row_mean(&mut tape, zs, grp)?;
            let target = targets.select_rows(&[y])?;
            let l = tape.squared_error(m, &target, Reduction::Sum)?;
            total = Some(match total {
                Some(t) => tape.add(t, l)?,
                None => l,
            });
        }
        let total = total.expect("at least one class");
        let value = tape.value(total).get(0, 0);
        let grads = tape.backward(total)?;
        Ok((value, vec![grads.get_or_zeros(xv, x[0].shape())]))
    };
    let trace = backtracking_descent(vec![init], steps, lr, objective)?;
    let features = trace.params.into_iter().next().expect("one parameter");
    Ok(LabeledCondensed { features, labels: syn_labels, targets, final_loss: trace.final_loss })
}
