mod common;

use plgc::graph::{generate_sbm, Graph, SbmConfig};
use plgc::pseudo::{round_assignment, sinkhorn_assign, train_pseudo_labels, PrototypeBank, PseudoLabelConfig, SinkhornConfig};
use plgc::tensor::Matrix;

fn max_marginal_error(q: &Matrix<f64>) -> (f64, f64) {
    let (b, k) = q.shape();
    let col = q.col_sums().iter().map(|c| (c - 1.0 / k as f64).abs()).fold(0.0, f64::max);
    let row = q.row_sums().iter().map(|r| (r - 1.0 / b as f64).abs()).fold(0.0, f64::max);
    (col, row)
}

#[test]
fn rows_are_exact_and_column_error_shrinks_with_sweeps() {
    let mut r = common::rng(77);
    for case in 0..100 {
        let k = 2 + case % 7;
        let b = k + (case * 7) % 40;
        let z = common::unit_rows(&mut r, b, 6);
        let bank = PrototypeBank::new(common::unit_rows(&mut r, k, 6)).unwrap();
        let mut prev = f64::INFINITY;
        for iters in [50, 500, 5000] {
            let cfg = SinkhornConfig { iters, ..SinkhornConfig::default() };
            let q = sinkhorn_assign(&z, &bank, &cfg).unwrap();
            let (col, row) = max_marginal_error(q.matrix());
            assert!(row <= 1e-12, "case {case}: row error {row:e}");
            assert!(col <= prev.max(1e-15), "case {case}: column error grew to {col:e} at {iters} sweeps");
            prev = col;
        }
    }
}

#[test]
fn matches_independent_reference_sweep_for_sweep() {
    let mut r = common::rng(78);
    for case in 0..50 {
        let k = 1 + case % 3;
        let b = k + case % (7 - k);
        let z = common::unit_rows(&mut r, b, 4);
        let bank = PrototypeBank::new(common::unit_rows(&mut r, k, 4)).unwrap();
        let scores = z.matmul(&bank.protos().transpose()).unwrap();
        for iters in [1, 50, 10_000] {
            let cfg = SinkhornConfig { iters, ..SinkhornConfig::default() };
            let q = sinkhorn_assign(&z, &bank, &cfg).unwrap();
            let reference = common::reference_sinkhorn(&scores, cfg.epsilon, iters);
            let diff = q.matrix().max_abs_diff(&reference).unwrap();
            assert!(diff <= 1e-12, "case {case}, {iters} sweeps: {diff:e}");
        }
    }
}

#[test]
fn rounding_a_balanced_plan_on_separated_points_is_balanced() {
    // three tight groups, one prototype at each group
    let mut r = common::rng(5);
    let protos = common::unit_rows(&mut r, 3, 5);
    let z = Matrix::from_fn(30, 5, |i, j| protos.get(i % 3, j));
    let bank = PrototypeBank::new(protos).unwrap();
    let q = sinkhorn_assign(&z, &bank, &SinkhornConfig::default()).unwrap();
    let hard = round_assignment(&q);
    assert_eq!(hard.counts(), vec![10, 10, 10]);
    assert_eq!(round_assignment(&hard).matrix(), hard.matrix());
}

#[test]
fn pseudo_labels_recover_blocks() {
    let sbm = SbmConfig::default();
    let mut good = 0;
    for seed in 0..5 {
        let g: Graph<f64> = generate_sbm(&sbm, seed).unwrap();
        let res = train_pseudo_labels(&g, &PseudoLabelConfig { seed, ..PseudoLabelConfig::default() }).unwrap();
        let labels: Vec<usize> = g.labels().iter().map(|y| y.unwrap()).collect();
        let agree = common::matched_agreement(&res.q_full.indices(), &labels, 3);
        if agree >= 0.95 {
            good += 1;
        }
        assert!(
            res.loss_history.last().unwrap() <= &res.loss_history[0],
            "seed {seed}: loss rose from {} to {}",
            res.loss_history[0],
            res.loss_history.last().unwrap()
        );
    }
    assert!(good >= 4, "{good}/5 seeds reached 95% agreement");
}

#[test]
fn zero_epochs_is_reproducible() {
    let g: Graph<f64> = generate_sbm(&SbmConfig::default(), 1).unwrap();
    let cfg = PseudoLabelConfig { epochs: 0, seed: 3, ..PseudoLabelConfig::default() };
    let a = train_pseudo_labels(&g, &cfg).unwrap();
    let b = train_pseudo_labels(&g, &cfg).unwrap();
    assert_eq!(a.q_full.indices(), b.q_full.indices());
    assert_eq!(a.encoder, b.encoder);
    assert_eq!(a.bank.protos(), b.bank.protos());
}
