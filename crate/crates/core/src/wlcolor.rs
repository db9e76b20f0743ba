//! Weisfeiler-Leman color refinement and the tree of color classes it
//! induces.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Graph;

/// A coloring of every node of a batch at one refinement iteration.
///
/// Color ids are dense (`0..num_colors`) and numbered by first occurrence in
/// node order, so the representative (lowest-indexed member) of color `k` is
/// always the `k`-th distinct node encountered.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Coloring {
    pub iteration: usize,
    colors: Vec<u32>,
    num_colors: usize,
}

impl Coloring {
    /// Relabels arbitrary keys to dense first-occurrence ids.
    fn from_keys<K: std::hash::Hash + Eq>(iteration: usize, keys: impl Iterator<Item = K>) -> Self {
        let mut table: HashMap<K, u32> = HashMap::new();
        let colors: Vec<u32> = keys
            .map(|k| {
                let next = table.len() as u32;
                *table.entry(k).or_insert(next)
            })
            .collect();
        Coloring {
            iteration,
            colors,
            num_colors: table.len(),
        }
    }

    pub fn uniform(num_nodes: usize) -> Self {
        Coloring {
            iteration: 0,
            colors: vec![0; num_nodes],
            num_colors: usize::from(num_nodes > 0),
        }
    }

    /// `c₀(v) = deg(v)`, relabeled densely.
    pub fn by_degree(graphs: &[Graph]) -> Self {
        Self::from_keys(
            0,
            graphs
                .iter()
                .flat_map(|g| (0..g.num_nodes()).map(move |v| g.degree(v))),
        )
    }

    pub fn num_nodes(&self) -> usize {
        self.colors.len()
    }

    pub fn num_colors(&self) -> usize {
        self.num_colors
    }

    pub fn color_of(&self, v: usize) -> usize {
        self.colors[v] as usize
    }

    pub fn colors(&self) -> &[u32] {
        &self.colors
    }

    /// Members of each color class, ascending.
    pub fn classes(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.num_colors];
        for (v, &c) in self.colors.iter().enumerate() {
            out[c as usize].push(v);
        }
        out
    }

    /// Lowest-indexed member of each color.
    pub fn representatives(&self) -> Vec<usize> {
        let mut reps = vec![usize::MAX; self.num_colors];
        for (v, &c) in self.colors.iter().enumerate() {
            let r = &mut reps[c as usize];
            if *r == usize::MAX {
                *r = v;
            }
        }
        reps
    }

    /// True when every class of `self` lies inside one class of `coarser`.
    pub fn refines(&self, coarser: &Coloring) -> bool {
        if self.num_nodes() != coarser.num_nodes() {
            return false;
        }
        let mut parent = vec![u32::MAX; self.num_colors];
        for (v, &c) in self.colors.iter().enumerate() {
            let p = &mut parent[c as usize];
            if *p == u32::MAX {
                *p = coarser.colors[v];
            } else if *p != coarser.colors[v] {
                return false;
            }
        }
        true
    }
}

/// Groups nodes of the whole batch by bit-identical feature rows.
pub fn initial_coloring(graphs: &[Graph]) -> Coloring {
    Coloring::from_keys(
        0,
        graphs.iter().flat_map(|g| {
            g.features()
                .rows()
                .into_iter()
                .map(|row| row.iter().map(|x| x.to_bits()).collect::<Vec<u64>>())
                .collect::<Vec<_>>()
        }),
    )
}

/// One WL refinement step over the batch.
pub fn refine(graphs: &[Graph], c: &Coloring) -> Coloring {
    let total: usize = graphs.iter().map(Graph::num_nodes).sum();
    assert_eq!(total, c.num_nodes(), "coloring does not cover the batch");
    let mut base = 0;
    let mut keys = Vec::with_capacity(total);
    for g in graphs {
        for v in 0..g.num_nodes() {
            let mut nb: Vec<u32> = g.neighbors(v).iter().map(|&u| c.colors[base + u]).collect();
            nb.sort_unstable();
            keys.push((c.colors[base + v], nb));
        }
        base += g.num_nodes();
    }
    Coloring::from_keys(c.iteration + 1, keys.into_iter())
}

/// `c₀` from features followed by `iterations` refinements.
pub fn wl_colorings(graphs: &[Graph], iterations: usize) -> Vec<Coloring> {
    colorings_from(graphs, initial_coloring(graphs), iterations)
}

pub fn colorings_from(graphs: &[Graph], c0: Coloring, iterations: usize) -> Vec<Coloring> {
    let mut out = Vec::with_capacity(iterations + 1);
    out.push(c0);
    for _ in 0..iterations {
        let next = refine(graphs, out.last().unwrap());
        out.push(next);
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HierarchyNode {
    pub id: usize,
    /// `-1` for the virtual root, `t` for classes of iteration `t`.
    pub depth: i64,
    pub color: Option<usize>,
    pub parent: Option<usize>,
    pub members: Vec<usize>,
}

/// The WL tree: a virtual root above the `c₀` classes, then one node per
/// `(iteration, color)` whose parent is the class containing it one
/// iteration earlier.
#[derive(Debug, Clone, PartialEq)]
pub struct ColorHierarchy {
    nodes: Vec<HierarchyNode>,
    level_start: Vec<usize>,
    node_graph: Option<Vec<usize>>,
}

#[derive(Serialize, Deserialize)]
struct HierarchyFile {
    nodes: Vec<HierarchyNode>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    node_graph: Option<Vec<usize>>,
}

impl ColorHierarchy {
    pub fn nodes(&self) -> &[HierarchyNode] {
        &self.nodes
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn root(&self) -> usize {
        0
    }

    /// Number of refinement levels below the root.
    pub fn num_levels(&self) -> usize {
        self.level_start.len() - 1
    }

    /// Hierarchy node ids at iteration `t`.
    pub fn level(&self, t: usize) -> std::ops::Range<usize> {
        self.level_start[t]..self.level_start[t + 1]
    }

    pub fn node_id(&self, depth: usize, color: usize) -> usize {
        let id = self.level_start[depth] + color;
        debug_assert!(id < self.level_start[depth + 1]);
        id
    }

    pub fn parents(&self) -> Vec<Option<usize>> {
        self.nodes.iter().map(|n| n.parent).collect()
    }

    pub fn node_graph(&self) -> Option<&[usize]> {
        self.node_graph.as_deref()
    }

    pub fn set_node_graph(&mut self, graph_of: Vec<usize>) {
        self.node_graph = Some(graph_of);
    }

    /// Path length between two hierarchy nodes via their lowest common
    /// ancestor.
    pub fn wl_distance(&self, a: usize, b: usize) -> usize {
        let (mut a, mut b) = (a, b);
        let mut steps = 0;
        while self.nodes[a].depth > self.nodes[b].depth {
            a = self.nodes[a].parent.expect("non-root node has a parent");
            steps += 1;
        }
        while self.nodes[b].depth > self.nodes[a].depth {
            b = self.nodes[b].parent.expect("non-root node has a parent");
            steps += 1;
        }
        while a != b {
            a = self.nodes[a].parent.expect("distinct nodes meet below the root");
            b = self.nodes[b].parent.expect("distinct nodes meet below the root");
            steps += 2;
        }
        steps
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&HierarchyFile {
            nodes: self.nodes.clone(),
            node_graph: self.node_graph.clone(),
        })?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    /// Rebuilds a hierarchy from its exported form, checking the tree shape
    /// and the level ordering.
    pub fn from_json(text: &str) -> Result<Self> {
        let file: HierarchyFile = serde_json::from_str(text)?;
        let nodes = file.nodes;
        if nodes.is_empty() || nodes[0].parent.is_some() || nodes[0].depth != -1 {
            return Err(Error::InvalidTree("node 0 must be the depth -1 root".into()));
        }
        let mut level_start = Vec::new();
        for (i, n) in nodes.iter().enumerate() {
            if n.id != i {
                return Err(Error::InvalidTree(format!("node {i} carries id {}", n.id)));
            }
            if i == 0 {
                continue;
            }
            let p = n
                .parent
                .filter(|&p| p < i)
                .ok_or_else(|| Error::InvalidTree(format!("node {i} lacks an earlier parent")))?;
            if nodes[p].depth != n.depth - 1 {
                return Err(Error::InvalidTree(format!(
                    "node {i} at depth {} has parent at depth {}",
                    n.depth, nodes[p].depth
                )));
            }
            let d = n.depth as usize;
            if d == level_start.len() {
                level_start.push(i);
            } else if d + 1 != level_start.len() {
                return Err(Error::InvalidTree("nodes are not grouped by depth".into()));
            }
        }
        level_start.push(nodes.len());
        Ok(ColorHierarchy {
            nodes,
            level_start,
            node_graph: file.node_graph,
        })
    }
}

/// Builds the hierarchy from `c₀, …, c_T`.
pub fn build_hierarchy(colorings: &[Coloring]) -> Result<ColorHierarchy> {
    assert!(!colorings.is_empty(), "need at least the initial coloring");
    let n = colorings[0].num_nodes();
    let mut nodes = vec![HierarchyNode {
        id: 0,
        depth: -1,
        color: None,
        parent: None,
        members: (0..n).collect(),
    }];
    let mut level_start = Vec::with_capacity(colorings.len() + 1);
    for (t, c) in colorings.iter().enumerate() {
        if t > 0 && !c.refines(&colorings[t - 1]) {
            return Err(Error::NotRefinement {
                coarser: t - 1,
                finer: t,
            });
        }
        let start = nodes.len();
        level_start.push(start);
        let reps = c.representatives();
        for (color, members) in c.classes().into_iter().enumerate() {
            let parent = if t == 0 {
                0
            } else {
                level_start[t - 1] + colorings[t - 1].color_of(reps[color])
            };
            nodes.push(HierarchyNode {
                id: start + color,
                depth: t as i64,
                color: Some(color),
                parent: Some(parent),
                members,
            });
        }
    }
    level_start.push(nodes.len());
    Ok(ColorHierarchy {
        nodes,
        level_start,
        node_graph: None,
    })
}

/// Free-function form of [`ColorHierarchy::wl_distance`].
pub fn wl_distance(h: &ColorHierarchy, a: usize, b: usize) -> usize {
    h.wl_distance(a, b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    fn star(leaves: usize) -> Graph {
        let edges: Vec<_> = (1..=leaves).map(|l| (0, l)).collect();
        Graph::unlabeled(leaves + 1, &edges).unwrap()
    }

    fn path(n: usize) -> Graph {
        let edges: Vec<_> = (0..n - 1).map(|i| (i, i + 1)).collect();
        Graph::unlabeled(n, &edges).unwrap()
    }

    #[test]
    fn constant_features_are_monochromatic() {
        let c = initial_coloring(&[star(3)]);
        assert_eq!(c.num_colors(), 1);
    }

    #[test]
    fn degree_one_hot_on_star() {
        let g = star(3);
        let mut f = Array2::zeros((4, 4));
        for v in 0..4 {
            f[[v, g.degree(v)]] = 1.0;
        }
        let g = g.with_features(f).unwrap();
        let c = initial_coloring(&[g]);
        assert_eq!(c.num_colors(), 2);
        assert_eq!(c.colors(), &[0, 1, 1, 1]);
    }

    #[test]
    fn star_refines_to_center_and_leaves() {
        let g = [star(3)];
        let c1 = refine(&g, &Coloring::uniform(4));
        assert_eq!(c1.num_colors(), 2);
        assert_eq!(c1.colors(), &[0, 1, 1, 1]);
        assert!(c1.refines(&Coloring::uniform(4)));
    }

    #[test]
    fn path_four_reaches_fixed_point() {
        let g = [path(4)];
        let c1 = refine(&g, &Coloring::uniform(4));
        assert_eq!(c1.colors(), &[0, 1, 1, 0]);
        let c2 = refine(&g, &c1);
        assert_eq!(c2.classes(), c1.classes());
    }

    #[test]
    fn hierarchy_of_star() {
        let cs = colorings_from(&[star(3)], Coloring::uniform(4), 2);
        let h = build_hierarchy(&cs).unwrap();
        // root, 1 class at t=0, 2 at t=1, 2 at t=2
        assert_eq!(h.len(), 6);
        assert_eq!(h.nodes()[1].parent, Some(0));
        assert_eq!(h.nodes()[2].parent, Some(1));
        assert_eq!(h.nodes()[3].parent, Some(1));
        assert_eq!(h.nodes()[4].parent, Some(2));
        assert_eq!(h.nodes()[5].parent, Some(3));
        assert_eq!(h.wl_distance(4, 5), 4);
        assert_eq!(h.wl_distance(2, 3), 2);
        assert_eq!(h.wl_distance(3, 3), 0);
        assert_eq!(h.wl_distance(0, 5), 3);
    }

    #[test]
    fn monochromatic_single_level() {
        let h = build_hierarchy(&[Coloring::uniform(3)]).unwrap();
        assert_eq!(h.len(), 2);
        assert_eq!(h.nodes()[1].parent, Some(0));
    }

    #[test]
    fn rejects_non_refinement() {
        let a = Coloring::from_keys(0, [0, 0, 1, 1].into_iter());
        let b = Coloring::from_keys(1, [0, 1, 1, 0].into_iter());
        assert!(matches!(
            build_hierarchy(&[a, b]),
            Err(Error::NotRefinement { .. })
        ));
    }

    #[test]
    fn json_round_trip() {
        let cs = colorings_from(&[path(5)], Coloring::uniform(5), 3);
        let mut h = build_hierarchy(&cs).unwrap();
        h.set_node_graph(vec![0; 5]);
        let back = ColorHierarchy::from_json(&h.to_json().unwrap()).unwrap();
        assert_eq!(back, h);
    }
}
