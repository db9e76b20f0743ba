use std::collections::BTreeSet;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{Corpus, TaskKind};
use crate::error::{Error, Result};
use crate::graph::Graph;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SynthKind {
    Ba,
    Er,
}

/// Edges per node count of the subgraph induced by every node within two
/// hops of `v` (including `v`).
pub fn ego_density(g: &Graph, v: usize) -> f64 {
    let mut ball = BTreeSet::from([v]);
    for &u in g.neighbors(v) {
        ball.insert(u);
        ball.extend(g.neighbors(u).iter().copied());
    }
    let edges: usize = ball
        .iter()
        .map(|&u| g.neighbors(u).iter().filter(|&&w| w > u && ball.contains(&w)).count())
        .sum();
    edges as f64 / ball.len() as f64
}

/// Number of edges among the neighbors of `v`.
pub fn triangles_at(g: &Graph, v: usize) -> usize {
    let nb = g.neighbors(v);
    nb.iter()
        .map(|&u| {
            // Both lists are sorted; count common members above u.
            let (a, b) = (g.neighbors(u), nb);
            let (mut i, mut j, mut c) = (0, 0, 0);
            while i < a.len() && j < b.len() {
                match a[i].cmp(&b[j]) {
                    std::cmp::Ordering::Less => i += 1,
                    std::cmp::Ordering::Greater => j += 1,
                    std::cmp::Ordering::Equal => {
                        if a[i] > u {
                            c += 1;
                        }
                        i += 1;
                        j += 1;
                    }
                }
            }
            c
        })
        .sum()
}

/// `deg(v) − 2t/deg(v)` with `t` the edges among neighbors; 0 for isolated
/// nodes.
pub fn effective_size(g: &Graph, v: usize) -> f64 {
    let d = g.degree(v);
    if d == 0 {
        return 0.0;
    }
    d as f64 - 2.0 * triangles_at(g, v) as f64 / d as f64
}

fn finish(edges: Vec<(usize, usize)>, n: usize) -> Result<Graph> {
    Graph::from_edges(n, &edges, Array2::ones((n, 1)))
}

/// Preferential attachment grown from a clique on the first `m` nodes; each
/// later node links to `m` distinct earlier nodes drawn proportionally to
/// degree.
fn barabasi_albert(n: usize, m: usize, rng: &mut ChaCha8Rng) -> Result<Graph> {
    let mut edges = Vec::with_capacity(m * (m.saturating_sub(1)) / 2 + m * n.saturating_sub(m));
    // Each node appears once per incident edge end.
    let mut ends: Vec<usize> = Vec::new();
    for u in 0..m {
        for v in u + 1..m {
            edges.push((u, v));
            ends.extend([u, v]);
        }
    }
    for v in m..n {
        let mut targets = BTreeSet::new();
        while targets.len() < m {
            let t = if ends.is_empty() {
                rng.gen_range(0..v)
            } else {
                ends[rng.gen_range(0..ends.len())]
            };
            targets.insert(t);
        }
        for t in targets {
            edges.push((t, v));
            ends.extend([t, v]);
        }
    }
    finish(edges, n)
}

fn erdos_renyi(n: usize, p: f64, rng: &mut ChaCha8Rng) -> Result<Graph> {
    let mut edges = Vec::new();
    for u in 0..n {
        for v in u + 1..n {
            if rng.gen::<f64>() < p {
                edges.push((u, v));
            }
        }
    }
    finish(edges, n)
}

/// `graphs` Barabási-Albert graphs with radius-2 ego-network density as the
/// per-node target.
pub fn gen_barabasi_albert(n: usize, m: usize, graphs: usize, seed: u64) -> Result<Corpus> {
    if m == 0 || m >= n {
        return Err(Error::Config(format!("BA needs 0 < m < n, got m={m}, n={n}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let graphs = (0..graphs)
        .map(|_| {
            let mut g = barabasi_albert(n, m, &mut rng)?;
            g.node_targets = Some((0..n).map(|v| ego_density(&g, v)).collect());
            Ok(g)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Corpus {
        name: format!("ba-n{n}-m{m}"),
        graphs,
        task: TaskKind::NodeRegression,
        num_classes: None,
        meta: json!({"kind": "ba", "params": {"n": n, "m": m, "target": "density"}, "seed": seed}),
    })
}

/// `graphs` Erdős-Rényi `G(n, p)` graphs with effective size as the per-node
/// target.
pub fn gen_erdos_renyi(n: usize, p: f64, graphs: usize, seed: u64) -> Result<Corpus> {
    if !(0.0..=1.0).contains(&p) || n == 0 {
        return Err(Error::Config(format!("ER needs n > 0 and p in [0, 1], got n={n}, p={p}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut isolated = 0;
    let graphs = (0..graphs)
        .map(|_| {
            let mut g = erdos_renyi(n, p, &mut rng)?;
            isolated += (0..n).filter(|&v| g.degree(v) == 0).count();
            g.node_targets = Some((0..n).map(|v| effective_size(&g, v)).collect());
            Ok(g)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Corpus {
        name: format!("er-n{n}-p{p}"),
        graphs,
        task: TaskKind::NodeRegression,
        num_classes: None,
        meta: json!({
            "kind": "er",
            "params": {"n": n, "p": p, "target": "effective-size"},
            "seed": seed,
            "isolated_nodes": isolated,
        }),
    })
}
