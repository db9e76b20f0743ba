use ndarray::{concatenate, Array2, Axis};

use crate::error::{Error, Result};

/// Undirected simple graph in compressed neighbor-list form.
///
/// Neighbor lists are sorted ascending; `u ∈ N(v)` iff `v ∈ N(u)`; no
/// self-loops.
#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    offsets: Vec<usize>,
    neighbors: Vec<usize>,
    features: Array2<f64>,
    pub graph_label: Option<usize>,
    pub node_targets: Option<Vec<f64>>,
    pub node_classes: Option<Vec<usize>>,
}

/// What [`Graph::from_edges`] had to repair in its input.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct EdgeRepairs {
    pub self_loops: usize,
    pub duplicates: usize,
}

impl Graph {
    /// Builds a graph from an edge list, symmetrizing it and dropping
    /// duplicate edges and self-loops.
    pub fn from_edges(
        num_nodes: usize,
        edges: &[(usize, usize)],
        features: Array2<f64>,
    ) -> Result<Self> {
        Self::from_edges_with_repairs(num_nodes, edges, features).map(|(g, _)| g)
    }

    pub fn from_edges_with_repairs(
        num_nodes: usize,
        edges: &[(usize, usize)],
        features: Array2<f64>,
    ) -> Result<(Self, EdgeRepairs)> {
        if features.nrows() != num_nodes {
            return Err(Error::InvalidGraph(format!(
                "{} feature rows for {} nodes",
                features.nrows(),
                num_nodes
            )));
        }
        let mut repairs = EdgeRepairs::default();
        let mut adj: Vec<Vec<usize>> = vec![Vec::new(); num_nodes];
        for &(u, v) in edges {
            if u >= num_nodes || v >= num_nodes {
                return Err(Error::InvalidGraph(format!(
                    "edge ({u}, {v}) references a node outside 0..{num_nodes}"
                )));
            }
            if u == v {
                repairs.self_loops += 1;
                continue;
            }
            adj[u].push(v);
            adj[v].push(u);
        }
        let mut offsets = Vec::with_capacity(num_nodes + 1);
        let mut neighbors = Vec::new();
        offsets.push(0);
        for list in &mut adj {
            list.sort_unstable();
            let before = list.len();
            list.dedup();
            repairs.duplicates += before - list.len();
            neighbors.extend_from_slice(list);
            offsets.push(neighbors.len());
        }
        // Each duplicate undirected edge shows up once in both endpoint lists.
        repairs.duplicates /= 2;
        Ok((
            Graph {
                offsets,
                neighbors,
                features,
                graph_label: None,
                node_targets: None,
                node_classes: None,
            },
            repairs,
        ))
    }

    /// Graph whose nodes all carry the single feature 1.
    pub fn unlabeled(num_nodes: usize, edges: &[(usize, usize)]) -> Result<Self> {
        Self::from_edges(num_nodes, edges, Array2::ones((num_nodes, 1)))
    }

    pub fn num_nodes(&self) -> usize {
        self.offsets.len() - 1
    }

    /// Number of undirected edges.
    pub fn num_edges(&self) -> usize {
        self.neighbors.len() / 2
    }

    pub fn neighbors(&self, v: usize) -> &[usize] {
        &self.neighbors[self.offsets[v]..self.offsets[v + 1]]
    }

    pub fn degree(&self, v: usize) -> usize {
        self.offsets[v + 1] - self.offsets[v]
    }

    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        self.neighbors(u).binary_search(&v).is_ok()
    }

    /// Undirected edges with `u < v`, in ascending order.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.num_nodes()).flat_map(move |u| {
            self.neighbors(u)
                .iter()
                .filter(move |&&v| v > u)
                .map(move |&v| (u, v))
        })
    }

    pub fn features(&self) -> &Array2<f64> {
        &self.features
    }

    pub fn feature_dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn with_features(mut self, features: Array2<f64>) -> Result<Self> {
        if features.nrows() != self.num_nodes() {
            return Err(Error::InvalidGraph(format!(
                "{} feature rows for {} nodes",
                features.nrows(),
                self.num_nodes()
            )));
        }
        self.features = features;
        Ok(self)
    }
}

/// Disjoint union of several graphs with per-node graph membership.
#[derive(Debug, Clone)]
pub struct Batch {
    pub graph: Graph,
    pub graph_of: Vec<usize>,
    /// Node offset of each member graph; `offsets[i]..offsets[i + 1]` are the
    /// nodes of graph `i`.
    pub offsets: Vec<usize>,
}

impl Batch {
    pub fn num_graphs(&self) -> usize {
        self.offsets.len() - 1
    }

    /// Packs graphs into one block-diagonal graph, keeping their order.
    ///
    /// Panics if `graphs` is empty or the feature widths disagree.
    pub fn union(graphs: &[&Graph]) -> Batch {
        assert!(!graphs.is_empty(), "cannot batch zero graphs");
        let width = graphs[0].feature_dim();
        assert!(
            graphs.iter().all(|g| g.feature_dim() == width),
            "feature widths differ within a batch"
        );
        let mut offsets = vec![0];
        let mut node_offsets = vec![0];
        let mut neighbors = Vec::new();
        let mut graph_of = Vec::new();
        for (gi, g) in graphs.iter().enumerate() {
            let base = *offsets.last().unwrap();
            let nbase = neighbors.len();
            neighbors.extend(g.neighbors.iter().map(|&v| v + base));
            node_offsets.extend(g.offsets[1..].iter().map(|&o| o + nbase));
            graph_of.extend(std::iter::repeat(gi).take(g.num_nodes()));
            offsets.push(base + g.num_nodes());
        }
        let views: Vec<_> = graphs.iter().map(|g| g.features.view()).collect();
        let features = concatenate(Axis(0), &views).expect("equal widths checked above");
        let node_targets = graphs
            .iter()
            .map(|g| g.node_targets.clone())
            .collect::<Option<Vec<_>>>()
            .map(|v| v.concat());
        let node_classes = graphs
            .iter()
            .map(|g| g.node_classes.clone())
            .collect::<Option<Vec<_>>>()
            .map(|v| v.concat());
        let graph = Graph {
            offsets: node_offsets,
            neighbors,
            features,
            graph_label: if graphs.len() == 1 {
                graphs[0].graph_label
            } else {
                None
            },
            node_targets,
            node_classes,
        };
        Batch {
            graph,
            graph_of,
            offsets,
        }
    }
}
