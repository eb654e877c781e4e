mod common;

use plgc::encoder::{encode, init_encoder, EncoderConfig};
use plgc::graph::{normalize_adjacency, Graph, NormalizedAdjacency};
use plgc::tensor::Matrix;

fn small() -> EncoderConfig {
    EncoderConfig { hidden_dim: 16, embed_dim: 8, seed: 4 }
}

fn permuted(g: &Graph<f64>, perm: &[usize]) -> Graph<f64> {
    // node i of the new graph is node perm[i] of the old one
    let mut inv = vec![0; perm.len()];
    for (i, &p) in perm.iter().enumerate() {
        inv[p] = i;
    }
    let x = g.features().select_rows(perm).unwrap();
    let edges = g.edges().iter().map(|&(u, v)| (inv[u], inv[v])).collect();
    Graph::new(x, edges, None, None).unwrap()
}

#[test]
fn encode_is_permutation_equivariant() {
    for seed in 0..10 {
        let mut r = common::rng(seed);
        let g = common::random_graph(&mut r, 9, 5, 0.35);
        let p = init_encoder::<f64>(5, &small()).unwrap();
        let z = encode(&p, &normalize_adjacency(&g), g.features()).unwrap();
        let mut perm: Vec<usize> = (0..9).collect();
        rand::seq::SliceRandom::shuffle(perm.as_mut_slice(), &mut r);
        let gp = permuted(&g, &perm);
        let zp = encode(&p, &normalize_adjacency(&gp), gp.features()).unwrap();
        assert!(zp.max_abs_diff(&z.select_rows(&perm).unwrap()).unwrap() <= 1e-10);
    }
}

#[test]
fn identity_adjacency_is_a_row_wise_map() {
    let mut r = common::rng(2);
    let x = common::uniform(&mut r, 6, 5, -1.0, 1.0);
    let p = init_encoder::<f64>(5, &small()).unwrap();
    let eye = NormalizedAdjacency::identity(6);
    let z = encode(&p, &eye, &x).unwrap();
    let perm = [3, 1, 5, 0, 2, 4];
    let zp = encode(&p, &eye, &x.select_rows(&perm).unwrap()).unwrap();
    assert!(zp.max_abs_diff(&z.select_rows(&perm).unwrap()).unwrap() <= 1e-12);
    for row in z.row_iter() {
        let n: f64 = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((n - 1.0).abs() <= 1e-12);
    }
}

#[test]
fn output_depends_only_on_two_hop_neighborhood() {
    // path 0-1-2-3-4-5
    let mut r = common::rng(6);
    let x = common::uniform(&mut r, 6, 5, -1.0, 1.0);
    let edges = vec![(0, 1), (1, 2), (2, 3), (3, 4), (4, 5)];
    let g = Graph::new(x.clone(), edges.clone(), None, None).unwrap();
    let p = init_encoder::<f64>(5, &small()).unwrap();
    let z = encode(&p, &normalize_adjacency(&g), g.features()).unwrap();
    let mut x2 = x.clone();
    x2.row_mut(5).iter_mut().for_each(|v| *v += 3.0);
    let g2 = Graph::new(x2, edges, None, None).unwrap();
    let z2 = encode(&p, &normalize_adjacency(&g2), g2.features()).unwrap();
    for node in 0..3 {
        assert_eq!(z.row(node), z2.row(node), "node {node} is three or more hops from node 5");
    }
    assert_ne!(z.row(4), z2.row(4));
}

#[test]
fn init_respects_glorot_bound_for_100_seeds() {
    for seed in 0..100 {
        let cfg = EncoderConfig { hidden_dim: 12, embed_dim: 7, seed };
        let p = init_encoder::<f64>(9, &cfg).unwrap();
        let b1 = (6.0f64 / 21.0).sqrt();
        let b2 = (6.0f64 / 19.0).sqrt();
        assert!(p.w1.data().iter().all(|v| v.abs() <= b1));
        assert!(p.w2.data().iter().all(|v| v.abs() <= b2));
    }
}

#[test]
fn f32_encoder_tracks_f64() {
    let mut r = common::rng(9);
    let g = common::random_graph(&mut r, 10, 5, 0.3);
    let p = init_encoder::<f64>(5, &small()).unwrap();
    let z = encode(&p, &normalize_adjacency(&g), g.features()).unwrap();
    let p32 = plgc::EncoderParams32 { w1: p.w1.cast(), w2: p.w2.cast() };
    let g32: Graph<f32> = Graph::new(g.features().cast(), g.edges().to_vec(), None, None).unwrap();
    let z32: Matrix<f32> = encode(&p32, &normalize_adjacency(&g32), g32.features()).unwrap();
    assert!(z.max_abs_diff(&z32.cast()).unwrap() < 1e-5);
}
