use std::collections::{BTreeSet, VecDeque};

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use wlhn_core::analysis::{correlation_study, matching_bound_check, Metric};
use wlhn_core::datasets::{split_indices, Corpus, Split, SplitUnit, TaskKind};
use wlhn_core::gradnet::Mode;
use wlhn_core::hypgeo::{self, raw, BallPoint, TangentVector};
use wlhn_core::sarkar2d::{embed_tree, Tree};
use wlhn_core::wlcolor::{build_hierarchy, wl_colorings, ColorHierarchy};
use wlhn_core::wlhn::{Arm, Model, ModelConfig, PreparedBatch};
use wlhn_core::{Batch, Graph};

fn vec_in(dim: usize, lo: f64, hi: f64) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(lo..hi, dim)
}

/// Points with norm at most `max_norm`, in 2 to 6 dimensions.
fn ball_point(max_norm: f64) -> impl Strategy<Value = Vec<f64>> {
    (2usize..=6).prop_flat_map(move |d| {
        (vec_in(d, -1.0, 1.0), 0.0..max_norm).prop_map(|(v, r)| {
            let n = raw::norm(&v);
            if n == 0.0 {
                vec![0.0; v.len()]
            } else {
                v.iter().map(|c| c * r / n).collect()
            }
        })
    })
}

fn same_dim_points(k: usize, max_norm: f64) -> impl Strategy<Value = Vec<Vec<f64>>> {
    (2usize..=6).prop_flat_map(move |d| {
        prop::collection::vec((vec_in(d, -1.0, 1.0), 0.0..max_norm), k).prop_map(|vs| {
            vs.into_iter()
                .map(|(v, r)| {
                    let n = raw::norm(&v).max(1e-12);
                    v.iter().map(|c| c * r / n).collect()
                })
                .collect()
        })
    })
}

fn bp(v: &[f64]) -> BallPoint {
    BallPoint::new(v.to_vec()).unwrap()
}

fn graph_strategy(max_n: usize) -> impl Strategy<Value = Graph> {
    (1usize..=max_n).prop_flat_map(|n| {
        prop::collection::vec((0..n, 0..n), 0..=2 * n).prop_map(move |e| Graph::unlabeled(n, &e).unwrap())
    })
}

/// Tree distance by breadth-first search over parent links.
fn bfs_distance(h: &ColorHierarchy, a: usize, b: usize) -> usize {
    let mut adj = vec![Vec::new(); h.len()];
    for n in h.nodes() {
        if let Some(p) = n.parent {
            adj[n.id].push(p);
            adj[p].push(n.id);
        }
    }
    let mut dist = vec![usize::MAX; h.len()];
    dist[a] = 0;
    let mut q = VecDeque::from([a]);
    while let Some(v) = q.pop_front() {
        for &u in &adj[v] {
            if dist[u] == usize::MAX {
                dist[u] = dist[v] + 1;
                q.push_back(u);
            }
        }
    }
    dist[b]
}

proptest! {
    #[test]
    fn distance_is_a_metric(ps in same_dim_points(3, 0.95)) {
        let (x, y, z) = (&ps[0], &ps[1], &ps[2]);
        let dxy = raw::distance(x, y);
        prop_assert!((dxy - raw::distance(y, x)).abs() <= 1e-12);
        prop_assert_eq!(raw::distance(x, x), 0.0);
        prop_assert!(raw::distance(x, z) <= dxy + raw::distance(y, z) + 1e-9);
    }

    #[test]
    fn distance_from_origin_is_twice_artanh(x in ball_point(0.99)) {
        let r = raw::norm(&x);
        prop_assume!(r > 1e-6);
        let d = raw::distance(&vec![0.0; x.len()], &x);
        let want = 2.0 * r.atanh();
        prop_assert!((d - want).abs() <= 1e-10 * want, "{} vs {}", d, want);
    }

    #[test]
    fn mobius_identities(x in ball_point(0.95)) {
        let p = bp(&x);
        let o = BallPoint::origin(x.len());
        let right = hypgeo::mobius_add(&p, &o);
        let left = hypgeo::mobius_add(&o, &p);
        let inv = hypgeo::mobius_add(&p.negated(), &p);
        for i in 0..x.len() {
            prop_assert!((right.coords()[i] - x[i]).abs() <= 1e-12);
            prop_assert!((left.coords()[i] - x[i]).abs() <= 1e-12);
            prop_assert!(inv.coords()[i].abs() <= 1e-12);
        }
    }

    #[test]
    fn exp_log_round_trip(x in ball_point(0.6), v in vec_in(6, -3.0, 3.0)) {
        let v: Vec<f64> = v[..x.len()].to_vec();
        let n = raw::norm(&v);
        let v: Vec<f64> = if n > 3.0 { v.iter().map(|c| c * 3.0 / n).collect() } else { v };
        let p = bp(&x);
        let back = hypgeo::log_map(&p, &hypgeo::exp_map(&p, &TangentVector::new(v.clone()).unwrap()));
        let err: f64 = back.coords().iter().zip(&v).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        prop_assert!(err <= 1e-8, "error {}", err);
    }

    #[test]
    fn inversion_is_an_isometric_involution(
        ps in same_dim_points(3, 0.95),
        ra in 0.05f64..0.95,
    ) {
        let an = raw::norm(&ps[0]).max(1e-12);
        let a: Vec<f64> = ps[0].iter().map(|c| c * ra / an).collect();
        let (x, y) = (&ps[1], &ps[2]);
        let ix = raw::invert(&a, x);
        let iy = raw::invert(&a, y);
        let xx = raw::invert(&a, &ix);
        for i in 0..x.len() {
            prop_assert!((xx[i] - x[i]).abs() <= 1e-9);
        }
        prop_assert!((raw::distance(&ix, &iy) - raw::distance(x, y)).abs() <= 1e-9);
        prop_assert!(raw::norm(&raw::invert(&a, &a)) <= 1e-12);
    }

    #[test]
    fn householder_preserves_inner_products(
        w in vec_in(5, -1.0, 1.0),
        u in vec_in(5, -1.0, 1.0),
        p1 in vec_in(5, -1.0, 1.0),
        p2 in vec_in(5, -1.0, 1.0),
    ) {
        let unit = |v: &[f64]| { let n = raw::norm(v).max(1e-12); v.iter().map(|c| c / n).collect::<Vec<_>>() };
        let (w, u) = (unit(&w), unit(&u));
        let out = hypgeo::rotate_about_origin(&w, &u, &[p1.clone(), p2.clone(), w.clone()]);
        prop_assert!((raw::dot(&out[0], &out[1]) - raw::dot(&p1, &p2)).abs() <= 1e-12);
        for i in 0..5 {
            prop_assert!((out[2][i] - u[i]).abs() <= 1e-12);
        }
    }

    #[test]
    fn equal_norm_order_is_preserved(ps in same_dim_points(3, 1.0), r in 0.01f64..0.99) {
        let v: Vec<Vec<f64>> = ps.iter().map(|p| {
            let n = raw::norm(p).max(1e-12);
            p.iter().map(|c| c * r / n).collect()
        }).collect();
        let e12 = raw::norm(&v[0].iter().zip(&v[1]).map(|(a, b)| a - b).collect::<Vec<_>>());
        let e13 = raw::norm(&v[0].iter().zip(&v[2]).map(|(a, b)| a - b).collect::<Vec<_>>());
        if e12 <= e13 {
            prop_assert!(raw::distance(&v[0], &v[1]) <= raw::distance(&v[0], &v[2]) + 1e-12);
        }
    }

    #[test]
    fn refinement_and_tree_shape(g in graph_strategy(20), t in 0usize..5) {
        let cs = wl_colorings(std::slice::from_ref(&g), t);
        prop_assert_eq!(cs.len(), t + 1);
        for w in cs.windows(2) {
            prop_assert!(w[1].refines(&w[0]));
            prop_assert!(w[1].num_colors() >= w[0].num_colors());
        }
        let h = build_hierarchy(&cs).unwrap();
        for n in h.nodes() {
            match n.parent {
                None => prop_assert_eq!(n.depth, -1),
                Some(p) => {
                    let parent = &h.nodes()[p];
                    prop_assert_eq!(parent.depth, n.depth - 1);
                    let pm: BTreeSet<usize> = parent.members.iter().copied().collect();
                    prop_assert!(n.members.iter().all(|v| pm.contains(v)));
                }
            }
        }
        for d in 0..=t {
            let total: usize = h.level(d).map(|i| h.nodes()[i].members.len()).sum();
            prop_assert_eq!(total, g.num_nodes());
        }
    }

    #[test]
    fn wl_distance_matches_bfs(g in graph_strategy(15), t in 0usize..4) {
        let h = build_hierarchy(&wl_colorings(std::slice::from_ref(&g), t)).unwrap();
        for a in 0..h.len() {
            for b in 0..h.len() {
                prop_assert_eq!(h.wl_distance(a, b), bfs_distance(&h, a, b));
            }
        }
    }

    #[test]
    fn splits_are_disjoint_and_cover(n in 0usize..300, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let parts = split_indices(n, [0.6, 0.2, 0.2], &mut rng);
        let all: BTreeSet<usize> = parts.iter().flatten().copied().collect();
        prop_assert_eq!(all.len(), n);
        prop_assert_eq!(parts.iter().map(Vec::len).sum::<usize>(), n);
        for (p, r) in parts.iter().zip([0.6, 0.2, 0.2]) {
            prop_assert!((p.len() as f64 - r * n as f64).abs() <= 1.0);
        }
    }

    #[test]
    fn node_splits_cover_every_graph(sizes in prop::collection::vec(1usize..40, 1..5), seed in any::<u64>()) {
        let graphs: Vec<Graph> = sizes.iter().map(|&n| Graph::unlabeled(n, &[]).unwrap()).collect();
        let corpus = Corpus { name: "c".into(), graphs, task: TaskKind::NodeRegression, num_classes: None, meta: serde_json::json!({}) };
        let Split::Nodes { per_graph } = wlhn_core::datasets::split(&corpus, [0.6, 0.2, 0.2], SplitUnit::Node, seed).unwrap() else {
            panic!("node split expected");
        };
        for (parts, &n) in per_graph.iter().zip(&sizes) {
            let all: BTreeSet<usize> = parts.iter().flatten().copied().collect();
            prop_assert_eq!(all, (0..n).collect::<BTreeSet<_>>());
        }
    }

    #[test]
    fn batches_are_block_diagonal(gs in prop::collection::vec(graph_strategy(10), 1..5)) {
        let refs: Vec<&Graph> = gs.iter().collect();
        let b = Batch::union(&refs);
        prop_assert_eq!(b.graph.num_edges(), gs.iter().map(Graph::num_edges).sum::<usize>());
        for (u, v) in b.graph.edges() {
            prop_assert_eq!(b.graph_of[u], b.graph_of[v]);
        }
    }

    #[test]
    fn matching_bound_holds(
        v in prop::collection::vec(vec_in(3, -2.0, 2.0), 1..6),
        seed in any::<u64>(),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let u: Vec<Vec<f64>> = v.iter().map(|_| (0..3).map(|_| rand::Rng::gen_range(&mut rng, -2.0..2.0)).collect()).collect();
        let r = matching_bound_check(&v, &u).unwrap();
        prop_assert!(r.holds, "{} > {}", r.lhs, r.rhs);
    }

    #[test]
    fn correlation_ignores_node_order(g in graph_strategy(12), seed in any::<u64>()) {
        let h = build_hierarchy(&wl_colorings(std::slice::from_ref(&g), 2)).unwrap();
        prop_assume!(h.len() >= 3);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let emb: Vec<Vec<f64>> = (0..h.len()).map(|_| (0..2).map(|_| rand::Rng::gen_range(&mut rng, -0.5..0.5)).collect()).collect();
        let ids: Vec<usize> = (0..h.len()).collect();
        let a = correlation_study(&h, &ids, &emb, Metric::Hyperbolic, 0).unwrap().correlation;
        let rev_ids: Vec<usize> = ids.iter().rev().copied().collect();
        let rev_emb: Vec<Vec<f64>> = emb.iter().rev().cloned().collect();
        let b = correlation_study(&h, &rev_ids, &rev_emb, Metric::Hyperbolic, 0).unwrap().correlation;
        match (a, b) {
            (Some(a), Some(b)) => prop_assert!((a - b).abs() <= 1e-12),
            (a, b) => prop_assert_eq!(a.is_none(), b.is_none()),
        }
    }

    #[test]
    fn sarkar_edges_have_length_tau(parents in prop::collection::vec(0usize..1000, 1..40), tau in 0.3f64..2.0) {
        let p: Vec<Option<usize>> = std::iter::once(None)
            .chain(parents.iter().enumerate().map(|(i, &r)| Some(r % (i + 1))))
            .collect();
        let tree = Tree::from_parents(&p).unwrap();
        if let Ok(e) = embed_tree(&tree, tau) {
            for v in 1..tree.len() {
                let d = e.distance(v, tree.parent(v).unwrap());
                prop_assert!((d - tau).abs() <= 1e-7, "{} vs {}", d, tau);
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn construction_invariants(g in graph_strategy(25), layers in 1usize..5, tau_i in 0usize..3, seed in any::<u64>()) {
        let tau = [0.5, 1.0, 2.0][tau_i];
        let prep = PreparedBatch::new(&[&g], layers);
        let cfg = ModelConfig { dim: 8, layers, tau, ..ModelConfig::default() };
        let m = Model::new(cfg, Arm::Wlhn, TaskKind::GraphClassification, 1, 2, seed).unwrap();
        let insp = m.inspect_in(&prep, Mode::Train);
        for t in 1..=layers {
            for v in 0..g.num_nodes() {
                let z = insp.z[t].row(v).to_vec();
                let d = raw::distance(&z, &insp.z[t - 1].row(v).to_vec());
                prop_assert!((d - tau).abs() <= 1e-7, "parent distance {} at t={}", d, t);
                prop_assert!(raw::norm(&z) <= 1.0 - hypgeo::BOUNDARY_EPS);
                let rep = insp.reps[t][prep.colorings[t].color_of(v)];
                prop_assert_eq!(insp.z[t].row(v), insp.z[t].row(rep));
                prop_assert_eq!(insp.h[t].row(v), insp.h[t].row(rep));
            }
        }
    }
}
