#![allow(dead_code)]

use plgc::condense::condensation_loss;
use plgc::encoder::{encode_on_tape, EncoderParams, EncoderVars};
use plgc::graph::{normalize_adjacency, Graph};
use plgc::pseudo::{swapped_loss, Assignment, PrototypeBank};
use plgc::tensor::{finite_difference_check, CsrMatrix, Matrix, Reduction, Tape, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(rng: &mut impl Rng, rows: usize, cols: usize, lo: f64, hi: f64) -> Matrix<f64> {
    Matrix::from_fn(rows, cols, |_, _| rng.random_range(lo..hi))
}

pub fn unit_rows(rng: &mut impl Rng, rows: usize, cols: usize) -> Matrix<f64> {
    let m = uniform(rng, rows, cols, -1.0, 1.0);
    plgc::tensor::row_l2_normalize(&m).unwrap()
}

/// Random distribution rows.
pub fn stochastic_rows(rng: &mut impl Rng, rows: usize, cols: usize) -> Matrix<f64> {
    let mut m = uniform(rng, rows, cols, 0.05, 1.0);
    for r in 0..rows {
        let s: f64 = m.row(r).iter().sum();
        m.row_mut(r).iter_mut().for_each(|v| *v /= s);
    }
    m
}

/// Erdos-Renyi graph on `n` nodes with edge probability `p`.
pub fn random_graph(rng: &mut impl Rng, n: usize, dim: usize, p: f64) -> Graph<f64> {
    let mut edges = Vec::new();
    for u in 0..n {
        for v in u + 1..n {
            if rng.random_bool(p) {
                edges.push((u, v));
            }
        }
    }
    let x = uniform(rng, n, dim, -1.0, 1.0);
    Graph::new(x, edges, None, None).unwrap()
}

/// Tape loss `f(x)` for one input, with its gradient.
fn tape_fn(
    build: impl Fn(&mut Tape<'_, f64>, Var) -> Var,
) -> impl Fn(&Matrix<f64>) -> (f64, Matrix<f64>) {
    move |x: &Matrix<f64>| {
        let mut tape = Tape::new();
        let v = tape.var(x.clone());
        let loss = build(&mut tape, v);
        let value = tape.value(loss).get(0, 0);
        let g = tape.backward(loss).unwrap();
        (value, g.get_or_zeros(v, x.shape()))
    }
}

const H: f64 = 1e-6;

/// Largest relative finite-difference error of every tape primitive, each
/// wrapped in a squared-error read-out against a random target.
pub fn primitive_gradient_errors(seed: u64) -> Vec<(&'static str, f64)> {
    let mut r = rng(seed);
    let x = uniform(&mut r, 5, 3, -1.0, 1.0);
    let right = uniform(&mut r, 3, 4, -1.0, 1.0);
    let left = uniform(&mut r, 2, 5, -1.0, 1.0);
    let t53 = uniform(&mut r, 5, 3, -1.0, 1.0);
    let t54 = uniform(&mut r, 5, 4, -1.0, 1.0);
    let t25 = uniform(&mut r, 2, 3, -1.0, 1.0);
    let t35 = uniform(&mut r, 3, 5, -1.0, 1.0);
    let t51 = uniform(&mut r, 5, 1, -1.0, 1.0);
    let t33 = uniform(&mut r, 3, 3, -1.0, 1.0);
    let bias = uniform(&mut r, 1, 3, -1.0, 1.0);
    let target = stochastic_rows(&mut r, 5, 3);
    let g = random_graph(&mut r, 5, 1, 0.5);
    let adj = normalize_adjacency(&g);
    let csr: CsrMatrix<f64> = adj.csr().clone();
    // keep relu inputs away from the kink
    let x_relu = x.map(|v| if v.abs() < 0.05 { v + 0.1 } else { v });

    let se = |t: &mut Tape<'_, f64>, v: Var, m: &Matrix<f64>| t.squared_error(v, m, Reduction::Sum).unwrap();
    let mut out = Vec::new();
    let mut check = |name: &'static str, f: &dyn Fn(&Matrix<f64>) -> (f64, Matrix<f64>), at: &Matrix<f64>| {
        out.push((name, finite_difference_check(f, at, H)));
    };

    check(
        "matmul (left operand)",
        &tape_fn(|t, v| {
            let b = t.constant(right.clone());
            let p = t.matmul(v, b).unwrap();
            se(t, p, &t54)
        }),
        &x,
    );
    check(
        "matmul (right operand)",
        &tape_fn(|t, v| {
            let a = t.constant(left.clone());
            let p = t.matmul(a, v).unwrap();
            se(t, p, &t25)
        }),
        &x,
    );
    check(
        "transpose",
        &tape_fn(|t, v| {
            let p = t.transpose(v).unwrap();
            se(t, p, &t35)
        }),
        &x,
    );
    {
        let csr = &csr;
        let t53r = &t53;
        let f = move |m: &Matrix<f64>| {
            let mut tape = Tape::new();
            let v = tape.var(m.clone());
            let p = tape.spmm(csr, v).unwrap();
            let loss = tape.squared_error(p, t53r, Reduction::Sum).unwrap();
            let value = tape.value(loss).get(0, 0);
            let g = tape.backward(loss).unwrap();
            (value, g.get_or_zeros(v, m.shape()))
        };
        check("spmm", &f, &x);
    }
    check(
        "relu",
        &tape_fn(|t, v| {
            let p = t.relu(v).unwrap();
            se(t, p, &t53)
        }),
        &x_relu,
    );
    check(
        "add",
        &tape_fn(|t, v| {
            let p = t.add(v, v).unwrap();
            se(t, p, &t53)
        }),
        &x,
    );
    check(
        "add_row (bias)",
        &tape_fn(|t, b| {
            let a = t.constant(x.clone());
            let p = t.add_row(a, b).unwrap();
            se(t, p, &t53)
        }),
        &bias,
    );
    check(
        "scale",
        &tape_fn(|t, v| {
            let p = t.scale(v, -2.5).unwrap();
            se(t, p, &t53)
        }),
        &x,
    );
    check(
        "row_sum",
        &tape_fn(|t, v| {
            let p = t.row_sum(v).unwrap();
            se(t, p, &t51)
        }),
        &x,
    );
    check("sum", &tape_fn(|t, v| t.sum(v).unwrap()), &x);
    check(
        "select_rows",
        &tape_fn(|t, v| {
            let p = t.select_rows(v, &[2, 0, 2]).unwrap();
            se(t, p, &t33)
        }),
        &x,
    );
    check(
        "row_l2_normalize",
        &tape_fn(|t, v| {
            let p = t.row_l2_normalize(v).unwrap();
            se(t, p, &t53)
        }),
        &x,
    );
    check("softmax_cross_entropy", &tape_fn(|t, v| t.softmax_cross_entropy(v, &target).unwrap()), &x);
    check("squared_error (sum)", &tape_fn(|t, v| t.squared_error(v, &t53, Reduction::Sum).unwrap()), &x);
    check("squared_error (mean)", &tape_fn(|t, v| t.mse(v, &t53).unwrap()), &x);
    out
}

/// `Σ ||encode(W1, W2, Â, X) − T||²` with the gradient on one of the three
/// inputs.
fn encoder_loss(
    adj: &plgc::graph::NormalizedAdjacency<f64>,
    w1: &Matrix<f64>,
    w2: &Matrix<f64>,
    x: &Matrix<f64>,
    target: &Matrix<f64>,
    wrt: usize,
) -> (f64, Matrix<f64>) {
    let mut tape = Tape::new();
    let vars = EncoderVars { w1: tape.var(w1.clone()), w2: tape.var(w2.clone()) };
    let xv = tape.var(x.clone());
    let z = encode_on_tape(&mut tape, vars, adj, xv).unwrap();
    let loss = tape.squared_error(z, target, Reduction::Sum).unwrap();
    let value = tape.value(loss).get(0, 0);
    let g = tape.backward(loss).unwrap();
    let grad = match wrt {
        0 => g.get_or_zeros(vars.w1, w1.shape()),
        1 => g.get_or_zeros(vars.w2, w2.shape()),
        _ => g.get_or_zeros(xv, x.shape()),
    };
    (value, grad)
}

/// Finite-difference errors of the end-to-end encoder, condensation and
/// swapped-prediction losses on a random 6-node graph.
pub fn end_to_end_gradient_errors(seed: u64) -> Vec<(&'static str, f64)> {
    let mut r = rng(seed.wrapping_add(10_000));
    let g = random_graph(&mut r, 6, 4, 0.5);
    let adj = normalize_adjacency(&g);
    let w1 = uniform(&mut r, 4, 5, -1.0, 1.0);
    let w2 = uniform(&mut r, 5, 3, -1.0, 1.0);
    let x = g.features().clone();
    let target = unit_rows(&mut r, 6, 3);
    let mut out = Vec::new();
    for (name, wrt, at) in [("encoder wrt W1", 0, &w1), ("encoder wrt W2", 1, &w2), ("encoder wrt X", 2, &x)] {
        let f = |m: &Matrix<f64>| match wrt {
            0 => encoder_loss(&adj, m, &w2, &x, &target, 0),
            1 => encoder_loss(&adj, &w1, m, &x, &target, 1),
            _ => encoder_loss(&adj, &w1, &w2, m, &target, 2),
        };
        out.push((name, finite_difference_check(f, at, H)));
    }

    // wide hidden layer so no condensed row is zeroed by the relu
    let enc = EncoderParams { w1: uniform(&mut r, 4, 32, -1.0, 1.0), w2: uniform(&mut r, 32, 3, -1.0, 1.0) };
    let bank = PrototypeBank::new(unit_rows(&mut r, 3, 3)).unwrap();
    let feats = uniform(&mut r, 3, 4, -1.0, 1.0);
    let f = |m: &Matrix<f64>| condensation_loss(m, &enc, &bank).unwrap();
    out.push(("condensation loss wrt X'", finite_difference_check(f, &feats, H)));

    let z = unit_rows(&mut r, 6, 3);
    let q = Assignment::soft(stochastic_rows(&mut r, 6, 3));
    let tau = 0.5;
    let f = |m: &Matrix<f64>| {
        let l = swapped_loss(m, &q, &bank, tau).unwrap();
        (l.loss, l.grad_z)
    };
    out.push(("swapped loss wrt Z", finite_difference_check(f, &z, H)));
    // gradient on the prototype rows, checked before re-normalization
    let analytic = swapped_loss(&z, &q, &bank, tau).unwrap().grad_bank;
    let mut worst = 0.0f64;
    let mut probe = bank.protos().clone();
    for i in 0..probe.data().len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + H;
        let plus = plain_swapped_loss(&z, &q, &probe, tau);
        probe.data_mut()[i] = orig - H;
        let minus = plain_swapped_loss(&z, &q, &probe, tau);
        probe.data_mut()[i] = orig;
        let fd = (plus - minus) / (2.0 * H);
        worst = worst.max((analytic.data()[i] - fd).abs() / fd.abs().max(1.0));
    }
    out.push(("swapped loss wrt prototypes", worst));
    out
}

/// Mean row cross-entropy between `q` and `softmax(z pᵀ / τ)`, written out
/// without the tape.
fn plain_swapped_loss(z: &Matrix<f64>, q: &Assignment<f64>, protos: &Matrix<f64>, tau: f64) -> f64 {
    let mut total = 0.0;
    for i in 0..z.rows() {
        let logits: Vec<f64> = (0..protos.rows())
            .map(|k| z.row(i).iter().zip(protos.row(k)).map(|(a, b)| a * b).sum::<f64>() / tau)
            .collect();
        let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + logits.iter().map(|l| (l - m).exp()).sum::<f64>().ln();
        total += (0..logits.len()).map(|k| q.matrix().get(i, k) * (lse - logits[k])).sum::<f64>();
    }
    total / z.rows() as f64
}

/// Plain Sinkhorn scaling used as an independent reference.
pub fn reference_sinkhorn(scores: &Matrix<f64>, epsilon: f64, sweeps: usize) -> Matrix<f64> {
    let (b, k) = scores.shape();
    let mut q: Vec<Vec<f64>> = (0..b).map(|i| (0..k).map(|j| (scores.get(i, j) / epsilon).exp()).collect()).collect();
    for _ in 0..sweeps {
        for j in 0..k {
            let c: f64 = (0..b).map(|i| q[i][j]).sum();
            for row in q.iter_mut() {
                row[j] *= 1.0 / (k as f64 * c);
            }
        }
        for row in q.iter_mut() {
            let s: f64 = row.iter().sum();
            row.iter_mut().for_each(|v| *v *= 1.0 / (b as f64 * s));
        }
    }
    Matrix::from_fn(b, k, |i, j| q[i][j])
}

fn permutations(k: usize) -> Vec<Vec<usize>> {
    if k == 0 {
        return vec![Vec::new()];
    }
    let mut out = Vec::new();
    for p in permutations(k - 1) {
        for pos in 0..=p.len() {
            let mut q = p.clone();
            q.insert(pos, k - 1);
            out.push(q);
        }
    }
    out
}

/// Fraction of nodes whose cluster matches its label under the best
/// one-to-one relabeling of clusters (exhaustive over permutations).
pub fn matched_agreement(clusters: &[usize], labels: &[usize], k: usize) -> f64 {
    let mut counts = vec![vec![0usize; k]; k];
    for (&c, &y) in clusters.iter().zip(labels) {
        counts[c][y] += 1;
    }
    let best = permutations(k)
        .into_iter()
        .map(|p| (0..k).map(|c| counts[c][p[c]]).sum::<usize>())
        .max()
        .unwrap_or(0);
    best as f64 / clusters.len() as f64
}

/// AUROC by counting every positive/negative pair, ties one half.
pub fn pairwise_auroc(scores: &[f64], labels: &[bool]) -> f64 {
    let mut twice = 0u64;
    let mut pairs = 0u64;
    for (i, &li) in labels.iter().enumerate() {
        if !li {
            continue;
        }
        for (j, &lj) in labels.iter().enumerate() {
            if lj {
                continue;
            }
            pairs += 1;
            twice += if scores[i] > scores[j] {
                2
            } else if scores[i] == scores[j] {
                1
            } else {
                0
            };
        }
    }
    twice as f64 / (2 * pairs) as f64
}
