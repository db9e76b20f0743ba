use std::collections::{BTreeMap, HashSet};
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde_json::json;

use super::{Corpus, TaskKind};
use crate::error::{Error, Result};
use crate::graph::Graph;

/// Repairs applied while loading.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct TudReport {
    /// Directed entries whose reverse was missing from `DS_A.txt`.
    pub asymmetric_edges: usize,
    pub duplicate_edges: usize,
    pub self_loops: usize,
}

fn read_lines(path: &Path) -> Result<Vec<(usize, String)>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim().to_string()))
        .filter(|(_, l)| !l.is_empty())
        .collect())
}

fn parse_ints(path: &Path, line: usize, text: &str) -> Result<Vec<i64>> {
    text.split(',')
        .map(|f| {
            let f = f.trim();
            f.parse::<i64>()
                .or_else(|_| f.parse::<f64>().map(|x| x as i64))
                .map_err(|_| Error::Parse {
                    path: path.to_path_buf(),
                    line,
                    msg: format!("not an integer: {f:?}"),
                })
        })
        .collect()
}

fn first_int(path: &Path, line: usize, text: &str) -> Result<i64> {
    Ok(parse_ints(path, line, text)?[0])
}

/// Loads `dir/name_{A,graph_indicator,graph_labels}.txt` and the optional
/// `name_node_labels.txt`. Node labels become one-hot features over the
/// sorted distinct label values; without them every node gets the single
/// feature 1. Graph labels are renumbered densely in sorted order.
pub fn load_tud(dir: &Path, name: &str) -> Result<(Corpus, TudReport)> {
    let file = |suffix: &str| -> PathBuf { dir.join(format!("{name}_{suffix}.txt")) };

    let ind_path = file("graph_indicator");
    let indicator: Vec<usize> = read_lines(&ind_path)?
        .iter()
        .map(|(i, l)| {
            let g = first_int(&ind_path, *i, l)?;
            usize::try_from(g - 1).map_err(|_| Error::Parse {
                path: ind_path.clone(),
                line: *i,
                msg: format!("graph id {g} is not 1-based"),
            })
        })
        .collect::<Result<_>>()?;
    let n_total = indicator.len();
    if indicator.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::InvalidGraph("graph indicator is not sorted by graph".into()));
    }
    let n_graphs = indicator.last().map_or(0, |g| g + 1);
    let mut start = vec![0usize; n_graphs + 1];
    for &g in &indicator {
        start[g + 1] += 1;
    }
    for g in 0..n_graphs {
        start[g + 1] += start[g];
    }

    let label_path = file("graph_labels");
    let raw_labels: Vec<i64> = read_lines(&label_path)?
        .iter()
        .map(|(i, l)| first_int(&label_path, *i, l))
        .collect::<Result<_>>()?;
    if raw_labels.len() != n_graphs {
        return Err(Error::InvalidGraph(format!(
            "{} graph labels for {n_graphs} graphs",
            raw_labels.len()
        )));
    }
    let label_ids: BTreeMap<i64, usize> = raw_labels
        .iter()
        .copied()
        .collect::<std::collections::BTreeSet<_>>()
        .into_iter()
        .enumerate()
        .map(|(i, l)| (l, i))
        .collect();

    let node_label_path = file("node_labels");
    let node_labels: Option<Vec<i64>> = if node_label_path.exists() {
        let v: Vec<i64> = read_lines(&node_label_path)?
            .iter()
            .map(|(i, l)| first_int(&node_label_path, *i, l))
            .collect::<Result<_>>()?;
        if v.len() != n_total {
            return Err(Error::InvalidGraph(format!(
                "{} node labels for {n_total} nodes",
                v.len()
            )));
        }
        Some(v)
    } else {
        None
    };
    let node_label_ids: Option<BTreeMap<i64, usize>> = node_labels.as_ref().map(|v| {
        v.iter()
            .copied()
            .collect::<std::collections::BTreeSet<_>>()
            .into_iter()
            .enumerate()
            .map(|(i, l)| (l, i))
            .collect()
    });

    let a_path = file("A");
    let mut per_graph: Vec<Vec<(usize, usize)>> = vec![Vec::new(); n_graphs];
    let mut directed: HashSet<(usize, usize)> = HashSet::new();
    for (i, l) in read_lines(&a_path)? {
        let nums = parse_ints(&a_path, i, &l)?;
        let &[u, v] = nums.as_slice() else {
            return Err(Error::Parse {
                path: a_path.clone(),
                line: i,
                msg: "expected two comma-separated node ids".into(),
            });
        };
        let in_range = |x: i64| x >= 1 && (x as usize) <= n_total;
        if !in_range(u) || !in_range(v) {
            return Err(Error::InvalidGraph(format!(
                "{}:{i}: edge ({u}, {v}) references a node outside 1..={n_total}",
                a_path.display()
            )));
        }
        let (u, v) = (u as usize - 1, v as usize - 1);
        let g = indicator[u];
        if indicator[v] != g {
            return Err(Error::InvalidGraph(format!(
                "{}:{i}: edge ({}, {}) joins graphs {} and {}",
                a_path.display(),
                u + 1,
                v + 1,
                g + 1,
                indicator[v] + 1
            )));
        }
        directed.insert((u, v));
        per_graph[g].push((u - start[g], v - start[g]));
    }
    let mut report = TudReport {
        asymmetric_edges: directed.iter().filter(|&&(u, v)| !directed.contains(&(v, u))).count(),
        ..TudReport::default()
    };

    let mut graphs = Vec::with_capacity(n_graphs);
    for g in 0..n_graphs {
        let n = start[g + 1] - start[g];
        let features = match (&node_labels, &node_label_ids) {
            (Some(labels), Some(ids)) => {
                let mut f = Array2::zeros((n, ids.len()));
                for v in 0..n {
                    f[[v, ids[&labels[start[g] + v]]]] = 1.0;
                }
                f
            }
            _ => Array2::ones((n, 1)),
        };
        // Both directions of an undirected edge are listed; only count
        // duplicates beyond that.
        let (mut graph, rep) = Graph::from_edges_with_repairs(n, &per_graph[g], features)?;
        let distinct: HashSet<(usize, usize)> = per_graph[g]
            .iter()
            .filter(|(u, v)| u != v)
            .map(|&(u, v)| (u.min(v), u.max(v)))
            .collect();
        let listed = per_graph[g].iter().filter(|(u, v)| u != v).count();
        let expected_listing = distinct.len() * 2;
        report.duplicate_edges += listed.saturating_sub(expected_listing);
        report.self_loops += rep.self_loops;
        graph.graph_label = Some(label_ids[&raw_labels[g]]);
        graphs.push(graph);
    }
    let corpus = Corpus {
        name: name.to_string(),
        graphs,
        task: TaskKind::GraphClassification,
        num_classes: Some(label_ids.len()),
        meta: json!({
            "kind": "tud",
            "params": {"name": name, "node_labels": node_labels.is_some()},
        }),
    };
    Ok((corpus, report))
}
