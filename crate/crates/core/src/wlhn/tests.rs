use ndarray::{array, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::datasets::TaskKind;
use crate::gradnet::{Adam, Forward, Matrix, Mode, Tape};
use crate::graph::Graph;
use crate::hypgeo::raw;

fn small(dim: usize, layers: usize, tau: f64) -> ModelConfig {
    ModelConfig {
        dim,
        layers,
        tau,
        ..ModelConfig::default()
    }
}

fn random_graph(n: usize, p: f64, rng: &mut impl Rng) -> Graph {
    let mut edges = Vec::new();
    for u in 0..n {
        for v in u + 1..n {
            if rng.gen::<f64>() < p {
                edges.push((u, v));
            }
        }
    }
    Graph::unlabeled(n, &edges).unwrap()
}

fn row(m: &Matrix, i: usize) -> Vec<f64> {
    m.row(i).to_vec()
}

#[test]
fn star_one_layer() {
    let g = Graph::unlabeled(3, &[(0, 1), (0, 2)]).unwrap();
    let prep = PreparedBatch::new(&[&g], 1);
    let m = Model::new(small(8, 1, 1.0), Arm::Wlhn, TaskKind::GraphClassification, 1, 2, 3).unwrap();
    let insp = m.inspect_in(&prep, Mode::Train);
    let z0 = &insp.z[0];
    assert_eq!(row(z0, 0), row(z0, 1));
    assert_eq!(row(z0, 0), row(z0, 2));
    let z1 = &insp.z[1];
    assert_eq!(row(z1, 1), row(z1, 2));
    assert_ne!(row(z1, 0), row(z1, 1));
    for v in 0..3 {
        let d = raw::distance(&row(z1, v), &row(z0, v));
        assert!((d - 1.0).abs() < 1e-7, "node {v}: {d}");
    }
}

#[test]
fn gin_with_identity_mlp_gives_one_plus_degree() {
    let g = Graph::unlabeled(4, &[(0, 1), (0, 2), (0, 3), (1, 2)]).unwrap();
    let prep = PreparedBatch::new(&[&g], 1);
    let cfg = ModelConfig {
        mlp_depth: 1,
        ..small(2, 1, 1.0)
    };
    let mut m = Model::new(cfg, Arm::Gin, TaskKind::GraphClassification, 1, 2, 0).unwrap();
    let set = |m: &mut Model, name: &str, v: Matrix| {
        let id = m.params.id(name).unwrap();
        m.params.set_value(id, v);
    };
    set(&mut m, "input.weight", array![[1.0, 1.0]]);
    set(&mut m, "gin.1.mlp.0.weight", Array2::eye(2));
    // Makes the running-statistics normalization an exact identity.
    set(&mut m, "gin.1.mlp.0.bn.running_var", array![[1.0 - 1e-5, 1.0 - 1e-5]]);
    let insp = m.inspect(&prep);
    for v in 0..4 {
        let want = 1.0 + g.degree(v) as f64;
        for j in 0..2 {
            assert!((insp.h[1][[v, j]] - want).abs() < 1e-12, "node {v}: {}", insp.h[1][[v, j]]);
        }
    }
}

#[test]
fn construction_invariants_on_random_graphs() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for trial in 0..6 {
        let n = rng.gen_range(5..30);
        let g = random_graph(n, 0.15, &mut rng);
        let layers = rng.gen_range(1..5);
        let tau = [0.5, 1.0, 2.0][trial % 3];
        let prep = PreparedBatch::new(&[&g], layers);
        let m = Model::new(small(16, layers, tau), Arm::Wlhn, TaskKind::GraphClassification, 1, 2, trial as u64)
            .unwrap();
        let insp = m.inspect_in(&prep, Mode::Train);
        for t in 1..=layers {
            for v in 0..n {
                let d = raw::distance(&row(&insp.z[t], v), &row(&insp.z[t - 1], v));
                assert!((d - tau).abs() <= 1e-7, "t={t} v={v}: {d}");
                if t >= 2 {
                    let gp = row(&insp.z[t - 2], v);
                    let far = raw::distance(&row(&insp.z[t], v), &gp);
                    let near = raw::distance(&row(&insp.z[t - 1], v), &gp);
                    assert!(far >= near.max(tau) - 1e-9, "t={t} v={v}: {far} < {near}");
                }
            }
            let dirs = &insp.directions[t];
            let u = insp.reflected_parent_dir[t].as_ref().unwrap();
            for k in 0..dirs.nrows() {
                let dot = raw::dot(&row(dirs, k), &row(u, k));
                assert!(dot <= 1e-12, "t={t} class {k}: {dot}");
            }
            let coloring = &prep.colorings[t];
            for v in 0..n {
                let rep = insp.reps[t][coloring.color_of(v) as usize];
                assert_eq!(row(&insp.z[t], v), row(&insp.z[t], rep));
            }
        }
    }
}

#[test]
fn readout_ignores_node_order() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let g = random_graph(12, 0.3, &mut rng);
    let mut perm: Vec<usize> = (0..12).collect();
    perm.reverse();
    perm.swap(2, 7);
    let edges: Vec<(usize, usize)> = g.edges().map(|(u, v)| (perm[u], perm[v])).collect();
    let h = Graph::unlabeled(12, &edges).unwrap();
    let m = Model::new(small(8, 3, 1.0), Arm::Wlhn, TaskKind::GraphClassification, 1, 2, 1).unwrap();
    let readout = |g: &Graph| {
        let prep = PreparedBatch::new(&[g], 3);
        let tape = Tape::new();
        let fwd = Forward::new(&tape, &m.params, Mode::Eval, 0);
        let out = m.forward(&fwd, &prep);
        let r = tape.value(out.readout).clone();
        r
    };
    let (a, b) = (readout(&g), readout(&h));
    for (x, y) in a.iter().zip(b.iter()) {
        assert!((x - y).abs() <= 1e-12, "{x} vs {y}");
    }
}

#[test]
fn zero_head_gives_uniform_cross_entropy() {
    let g = Graph::unlabeled(4, &[(0, 1), (1, 2), (2, 3)]).unwrap();
    let prep = PreparedBatch::new(&[&g], 2);
    let mut m = Model::new(small(8, 2, 1.0), Arm::Wlhn, TaskKind::GraphClassification, 1, 3, 0).unwrap();
    for name in ["head.2.weight", "head.2.bias"] {
        let id = m.params.id(name).unwrap();
        let zeros = Matrix::zeros(m.params.value(id).dim());
        m.params.set_value(id, zeros);
    }
    let tape = Tape::new();
    let fwd = Forward::new(&tape, &m.params, Mode::Eval, 0);
    let out = m.forward(&fwd, &prep);
    let loss = tape.scalar(tape.cross_entropy(out.output, &[1]));
    assert!((loss - 3f64.ln()).abs() < 1e-12);
}

#[test]
fn regression_head_memorizes_ten_points() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let edges: Vec<(usize, usize)> = (0..9).map(|i| (i, i + 1)).collect();
    let g = Graph::from_edges(10, &edges, Array2::eye(10)).unwrap();
    let y = Matrix::from_shape_fn((10, 1), |_| rng.gen_range(-1.0..1.0));
    let prep = PreparedBatch::new(&[&g], 2);
    let mut m = Model::new(small(16, 2, 1.0), Arm::Wlhn, TaskKind::NodeRegression, 10, 1, 0).unwrap();
    let adam = Adam::new(1e-2);
    let mut last = f64::INFINITY;
    for step in 0..500 {
        let tape = Tape::new();
        let fwd = Forward::new(&tape, &m.params, Mode::Train, step);
        let out = m.forward(&fwd, &prep);
        let loss = tape.mse(out.output, &y);
        last = tape.scalar(loss);
        let grads = tape.backward(loss);
        m.params.accumulate(&fwd, &grads);
        let updates = fwd.take_updates();
        drop(fwd);
        m.params.apply_updates(updates);
        adam.step(&mut m.params);
    }
    assert!(last < 1e-3, "final training mse {last}");
}

#[test]
fn argmax_ties_go_to_lowest_index() {
    let m = array![[0.5, 0.5, 0.1], [0.0, 2.0, 2.0], [-1.0, -1.0, -1.0]];
    assert_eq!(argmax_rows(&m), vec![0, 1, 0]);
}

#[test]
fn isomorphic_graphs_share_final_points() {
    let g = Graph::unlabeled(5, &[(0, 1), (1, 2), (2, 3), (3, 4), (4, 0), (0, 2)]).unwrap();
    let h = Graph::unlabeled(5, &[(4, 3), (3, 2), (2, 1), (1, 0), (0, 4), (4, 2)]).unwrap();
    let prep = PreparedBatch::new(&[&g, &h], 2);
    let m = Model::new(small(8, 2, 1.0), Arm::Wlhn, TaskKind::GraphClassification, 1, 2, 4).unwrap();
    let insp = m.inspect(&prep);
    let key = |v: usize| format!("{:?}", row(&insp.z[2], v));
    let mut a: Vec<String> = (0..5).map(key).collect();
    let mut b: Vec<String> = (5..10).map(key).collect();
    a.sort();
    b.sort();
    assert_eq!(a, b);
}

#[test]
fn class_embeddings_put_root_at_origin() {
    let g = Graph::unlabeled(3, &[(0, 1), (0, 2)]).unwrap();
    let prep = PreparedBatch::new(&[&g], 1);
    let h = prep.hierarchy();
    let m = Model::new(small(4, 1, 1.0), Arm::Wlhn, TaskKind::GraphClassification, 1, 2, 0).unwrap();
    let insp = m.inspect_in(&prep, Mode::Train);
    let e = class_embeddings(&insp, &h, EmbeddingSpace::Hyperbolic);
    assert_eq!(e.len(), h.len());
    assert_eq!(e[h.root()], vec![0.0; 4]);
    for node in h.nodes().iter().filter(|n| n.depth >= 0) {
        let d = raw::distance(&e[node.id], &e[node.parent.unwrap()]);
        assert!((d - 1.0).abs() < 1e-7);
    }
}
