//! Combinatorial embedding of a rooted tree into the Poincaré disk with
//! every edge of hyperbolic length `τ`.

use std::collections::{HashMap, VecDeque};
use std::f64::consts::PI;
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::analysis::{pearson, ALL_PAIRS_LIMIT, SAMPLED_PAIRS};
use crate::error::{Error, Result};
use crate::hypgeo::{raw, BOUNDARY_EPS};
use crate::wlcolor::ColorHierarchy;

/// Rooted tree over nodes `0..n` with external labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Tree {
    parent: Vec<Option<usize>>,
    children: Vec<Vec<usize>>,
    depth: Vec<usize>,
    labels: Vec<i64>,
    root: usize,
}

impl Tree {
    /// Children keep the order in which they appear in `parent`.
    pub fn from_parents(parent: &[Option<usize>]) -> Result<Self> {
        let labels = (0..parent.len() as i64).collect();
        Self::build(parent.to_vec(), labels)
    }

    fn build(parent: Vec<Option<usize>>, labels: Vec<i64>) -> Result<Self> {
        let n = parent.len();
        let roots: Vec<usize> = (0..n).filter(|&v| parent[v].is_none()).collect();
        let &[root] = roots.as_slice() else {
            return Err(Error::InvalidTree(format!("expected one root, found {}", roots.len())));
        };
        let mut children = vec![Vec::new(); n];
        for (v, p) in parent.iter().enumerate() {
            if let Some(p) = *p {
                if p >= n {
                    return Err(Error::InvalidTree(format!("node {v} has missing parent {p}")));
                }
                children[p].push(v);
            }
        }
        let mut depth = vec![usize::MAX; n];
        depth[root] = 0;
        let mut queue = VecDeque::from([root]);
        let mut seen = 1;
        while let Some(v) = queue.pop_front() {
            for &c in &children[v] {
                depth[c] = depth[v] + 1;
                seen += 1;
                queue.push_back(c);
            }
        }
        if seen != n {
            return Err(Error::InvalidTree("not every node is reachable from the root".into()));
        }
        Ok(Tree {
            parent,
            children,
            depth,
            labels,
            root,
        })
    }

    /// Parses `root` on the first line followed by `parent child` lines.
    /// Blank lines and `#` comments are skipped.
    pub fn from_edge_list(text: &str) -> Result<Self> {
        let parse_err = |line: usize, msg: String| Error::Parse {
            path: "<edge list>".into(),
            line,
            msg,
        };
        let mut index: HashMap<i64, usize> = HashMap::new();
        let mut labels = Vec::new();
        let mut parent: Vec<Option<usize>> = Vec::new();
        let mut intern = |label: i64, labels: &mut Vec<i64>, parent: &mut Vec<Option<usize>>| {
            *index.entry(label).or_insert_with(|| {
                labels.push(label);
                parent.push(None);
                labels.len() - 1
            })
        };
        let mut saw_root = false;
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            let nums: Vec<i64> = fields
                .iter()
                .map(|f| f.parse::<i64>().map_err(|e| parse_err(i + 1, format!("{f:?}: {e}"))))
                .collect::<Result<_>>()?;
            if !saw_root {
                let &[r] = nums.as_slice() else {
                    return Err(parse_err(i + 1, "first line must hold the root id".into()));
                };
                intern(r, &mut labels, &mut parent);
                saw_root = true;
                continue;
            }
            let &[p, c] = nums.as_slice() else {
                return Err(parse_err(i + 1, "expected \"parent child\"".into()));
            };
            let pi = intern(p, &mut labels, &mut parent);
            let ci = intern(c, &mut labels, &mut parent);
            if ci == 0 || parent[ci].is_some() {
                return Err(parse_err(i + 1, format!("node {c} already has a parent")));
            }
            parent[ci] = Some(pi);
        }
        if !saw_root {
            return Err(parse_err(0, "empty edge list".into()));
        }
        Self::build(parent, labels)
    }

    /// The WL hierarchy as a tree; labels are hierarchy node ids.
    pub fn from_hierarchy(h: &ColorHierarchy) -> Result<Self> {
        Self::from_parents(&h.parents())
    }

    pub fn len(&self) -> usize {
        self.parent.len()
    }

    pub fn is_empty(&self) -> bool {
        self.parent.is_empty()
    }

    pub fn root(&self) -> usize {
        self.root
    }

    pub fn parent(&self, v: usize) -> Option<usize> {
        self.parent[v]
    }

    pub fn children(&self, v: usize) -> &[usize] {
        &self.children[v]
    }

    pub fn depth(&self, v: usize) -> usize {
        self.depth[v]
    }

    pub fn label(&self, v: usize) -> i64 {
        self.labels[v]
    }

    /// Number of edges on the path between `a` and `b`.
    pub fn distance(&self, mut a: usize, mut b: usize) -> usize {
        let mut steps = 0;
        while self.depth[a] > self.depth[b] {
            a = self.parent[a].unwrap();
            steps += 1;
        }
        while self.depth[b] > self.depth[a] {
            b = self.parent[b].unwrap();
            steps += 1;
        }
        while a != b {
            a = self.parent[a].unwrap();
            b = self.parent[b].unwrap();
            steps += 2;
        }
        steps
    }
}

#[derive(Debug, Clone)]
pub struct TreeEmbedding {
    pub tree: Tree,
    pub tau: f64,
    /// Disk coordinates per tree node.
    pub points: Vec<[f64; 2]>,
}

/// Places the root at the origin and every child at hyperbolic distance
/// `tau` from its parent. The root's children are spread evenly around the
/// full circle; a node with `k` children splits the circle into `k + 1`
/// equal sectors and leaves the one pointing at its own parent empty.
pub fn embed_tree(tree: &Tree, tau: f64) -> Result<TreeEmbedding> {
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(Error::Config(format!("tau must be positive and finite, got {tau}")));
    }
    // Euclidean radius at hyperbolic distance tau from the origin.
    let radius = (tau / 2.0).tanh();
    let limit = 1.0 - BOUNDARY_EPS;
    if radius >= limit {
        return Err(Error::PrecisionExhausted { depth: 1 });
    }
    let mut points = vec![[0.0; 2]; tree.len()];
    let mut queue = VecDeque::from([tree.root]);
    while let Some(a) = queue.pop_front() {
        let kids = &tree.children[a];
        if kids.is_empty() {
            continue;
        }
        match tree.parent[a] {
            None => {
                let k = kids.len() as f64;
                for (i, &c) in kids.iter().enumerate() {
                    let ang = 2.0 * PI * i as f64 / k;
                    points[c] = [radius * ang.cos(), radius * ang.sin()];
                }
            }
            Some(b) => {
                let fa = points[a];
                let u = raw::invert(&fa, &points[b]);
                let theta = u[1].atan2(u[0]);
                let deg = (kids.len() + 1) as f64;
                for (i, &c) in kids.iter().enumerate() {
                    let ang = theta + 2.0 * PI * (i + 1) as f64 / deg;
                    let local = [radius * ang.cos(), radius * ang.sin()];
                    let back = raw::invert(&fa, &local);
                    let norm = raw::norm(&back);
                    if !(norm < limit) {
                        return Err(Error::PrecisionExhausted {
                            depth: tree.depth[c],
                        });
                    }
                    points[c] = [back[0], back[1]];
                }
            }
        }
        queue.extend(kids.iter().copied());
    }
    Ok(TreeEmbedding {
        tree: tree.clone(),
        tau,
        points,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DistortionReport {
    pub tau: f64,
    pub n_nodes: usize,
    pub n_pairs: usize,
    pub sampled: bool,
    /// Mean of `|d_𝔻(u, v) / (τ d_tree(u, v)) − 1|`.
    pub mean_distortion: f64,
    pub max_distortion: f64,
    /// Pearson correlation of `d_𝔻` with `τ d_tree`; absent when undefined.
    pub correlation: Option<f64>,
}

impl TreeEmbedding {
    pub fn distance(&self, u: usize, v: usize) -> f64 {
        raw::distance(&self.points[u], &self.points[v])
    }

    /// Distortion over all pairs of distinct nodes, or over uniformly sampled
    /// pairs for trees above the all-pairs limit.
    pub fn distortion_report(&self, seed: u64) -> DistortionReport {
        let n = self.tree.len();
        let sampled = n > ALL_PAIRS_LIMIT;
        let pairs: Vec<(usize, usize)> = if sampled {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..SAMPLED_PAIRS)
                .map(|_| {
                    let i = rng.gen_range(0..n);
                    let mut j = rng.gen_range(0..n - 1);
                    if j >= i {
                        j += 1;
                    }
                    (i, j)
                })
                .collect()
        } else {
            (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect()
        };
        let mut tree_d = Vec::with_capacity(pairs.len());
        let mut disk_d = Vec::with_capacity(pairs.len());
        let (mut sum, mut max) = (0.0, 0.0f64);
        for &(u, v) in &pairs {
            let t = self.tau * self.tree.distance(u, v) as f64;
            let d = self.distance(u, v);
            let dist = (d / t - 1.0).abs();
            sum += dist;
            max = max.max(dist);
            tree_d.push(t);
            disk_d.push(d);
        }
        DistortionReport {
            tau: self.tau,
            n_nodes: n,
            n_pairs: pairs.len(),
            sampled,
            mean_distortion: if pairs.is_empty() { 0.0 } else { sum / pairs.len() as f64 },
            max_distortion: max,
            correlation: pearson(&tree_d, &disk_d),
        }
    }

    /// `node_id,x,y` rows with the tree's labels as ids.
    pub fn write_csv(&self, mut w: impl Write) -> std::io::Result<()> {
        writeln!(w, "node_id,x,y")?;
        for (v, p) in self.points.iter().enumerate() {
            writeln!(w, "{},{},{}", self.tree.labels[v], p[0], p[1])?;
        }
        Ok(())
    }
}
