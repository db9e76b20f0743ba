//! Corpora: TUD loading, synthetic generators with structural targets,
//! splitting, target scaling and batching.

mod synth;
mod tud;

use std::path::Path;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Graph;

pub use synth::{
    effective_size, ego_density, gen_barabasi_albert, gen_erdos_renyi, triangles_at, SynthKind,
};
pub use tud::{load_tud, TudReport};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TaskKind {
    GraphClassification,
    NodeRegression,
    NodeClassification,
}

#[derive(Debug, Clone)]
pub struct Corpus {
    pub name: String,
    pub graphs: Vec<Graph>,
    pub task: TaskKind,
    pub num_classes: Option<usize>,
    pub meta: serde_json::Value,
}

#[derive(Serialize, Deserialize)]
struct GraphRecord {
    edges: Vec<[usize; 2]>,
    features: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    node_targets: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    node_classes: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    graph_label: Option<usize>,
}

#[derive(Serialize, Deserialize)]
struct CorpusFile {
    graphs: Vec<GraphRecord>,
    meta: serde_json::Value,
}

impl Corpus {
    pub fn num_nodes(&self) -> usize {
        self.graphs.iter().map(Graph::num_nodes).sum()
    }

    pub fn feature_dim(&self) -> usize {
        self.graphs.first().map_or(0, Graph::feature_dim)
    }

    pub fn to_json(&self) -> Result<String> {
        let graphs = self
            .graphs
            .iter()
            .map(|g| GraphRecord {
                edges: g.edges().map(|(u, v)| [u, v]).collect(),
                features: g.features().rows().into_iter().map(|r| r.to_vec()).collect(),
                node_targets: g.node_targets.clone(),
                node_classes: g.node_classes.clone(),
                graph_label: g.graph_label,
            })
            .collect();
        let mut meta = self.meta.clone();
        if let serde_json::Value::Object(m) = &mut meta {
            m.insert("name".into(), self.name.clone().into());
            m.insert("task".into(), serde_json::to_value(self.task)?);
            if let Some(k) = self.num_classes {
                m.insert("num_classes".into(), k.into());
            }
        }
        Ok(serde_json::to_string(&CorpusFile { graphs, meta })?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: CorpusFile = serde_json::from_str(text)?;
        let meta = file.meta;
        let task = match meta.get("task") {
            Some(t) => serde_json::from_value(t.clone())?,
            None => TaskKind::NodeRegression,
        };
        let name = meta
            .get("name")
            .and_then(|v| v.as_str())
            .unwrap_or("corpus")
            .to_string();
        let num_classes = meta.get("num_classes").and_then(|v| v.as_u64()).map(|k| k as usize);
        let mut graphs = Vec::with_capacity(file.graphs.len());
        for (i, rec) in file.graphs.into_iter().enumerate() {
            let n = rec.features.len();
            let width = rec.features.first().map_or(0, Vec::len);
            if rec.features.iter().any(|r| r.len() != width) {
                return Err(Error::InvalidGraph(format!("graph {i}: ragged feature rows")));
            }
            let flat: Vec<f64> = rec.features.into_iter().flatten().collect();
            let features = Array2::from_shape_vec((n, width), flat).expect("checked widths");
            let edges: Vec<(usize, usize)> = rec.edges.iter().map(|e| (e[0], e[1])).collect();
            let mut g = Graph::from_edges(n, &edges, features)?;
            if let Some(t) = &rec.node_targets {
                if t.len() != n {
                    return Err(Error::InvalidGraph(format!("graph {i}: {} targets for {n} nodes", t.len())));
                }
            }
            if let Some(c) = &rec.node_classes {
                if c.len() != n {
                    return Err(Error::InvalidGraph(format!("graph {i}: {} classes for {n} nodes", c.len())));
                }
            }
            g.node_targets = rec.node_targets;
            g.node_classes = rec.node_classes;
            g.graph_label = rec.graph_label;
            graphs.push(g);
        }
        Ok(Corpus {
            name,
            graphs,
            task,
            num_classes,
            meta,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    /// Replaces every feature matrix with a single constant column of ones.
    pub fn with_constant_features(mut self) -> Self {
        self.graphs = self
            .graphs
            .into_iter()
            .map(|g| {
                let n = g.num_nodes();
                g.with_features(Array2::ones((n, 1))).expect("row count unchanged")
            })
            .collect();
        self
    }

    /// Replaces features with a one-hot encoding of node degree, sized by the
    /// largest degree in the corpus.
    pub fn with_degree_features(mut self) -> Self {
        let max = self
            .graphs
            .iter()
            .flat_map(|g| (0..g.num_nodes()).map(move |v| g.degree(v)))
            .max()
            .unwrap_or(0);
        self.graphs = self
            .graphs
            .into_iter()
            .map(|g| {
                let mut f = Array2::zeros((g.num_nodes(), max + 1));
                for v in 0..g.num_nodes() {
                    f[[v, g.degree(v)]] = 1.0;
                }
                g.with_features(f).expect("row count unchanged")
            })
            .collect();
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitUnit {
    Graph,
    Node,
}

/// Train/validation/test assignment. Node splits are drawn independently
/// inside each graph so every graph contributes to all three parts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Split {
    Graphs {
        train: Vec<usize>,
        val: Vec<usize>,
        test: Vec<usize>,
    },
    Nodes {
        per_graph: Vec<[Vec<usize>; 3]>,
    },
}

/// Shuffles `0..n` and slices it into parts of `round(rᵢ·n)` items for
/// train and validation, with the remainder for test.
pub fn split_indices(n: usize, ratios: [f64; 3], rng: &mut ChaCha8Rng) -> [Vec<usize>; 3] {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    let n_train = ((ratios[0] * n as f64).round() as usize).min(n);
    let n_val = ((ratios[1] * n as f64).round() as usize).min(n - n_train);
    let test = idx.split_off(n_train + n_val);
    let val = idx.split_off(n_train);
    [idx, val, test]
}

fn check_ratios(ratios: [f64; 3]) -> Result<()> {
    if ratios.iter().any(|r| !(0.0..=1.0).contains(r)) || (ratios.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!("split ratios {ratios:?} must be in [0, 1] and sum to 1")));
    }
    Ok(())
}

pub fn split(corpus: &Corpus, ratios: [f64; 3], unit: SplitUnit, seed: u64) -> Result<Split> {
    check_ratios(ratios)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(match unit {
        SplitUnit::Graph => {
            let [train, val, test] = split_indices(corpus.graphs.len(), ratios, &mut rng);
            Split::Graphs { train, val, test }
        }
        SplitUnit::Node => Split::Nodes {
            per_graph: corpus
                .graphs
                .iter()
                .map(|g| split_indices(g.num_nodes(), ratios, &mut rng))
                .collect(),
        },
    })
}

/// Affine map to zero mean and unit variance, fitted on training targets.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TargetScaler {
    pub mean: f64,
    pub std: f64,
}

impl TargetScaler {
    /// Population statistics of `values`; a zero spread falls back to 1.
    pub fn fit(values: &[f64]) -> Self {
        let n = values.len().max(1) as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let std = if var > 0.0 { var.sqrt() } else { 1.0 };
        TargetScaler { mean, std }
    }

    pub fn fit_train(corpus: &Corpus, split: &Split) -> Result<Self> {
        let mut vals = Vec::new();
        match split {
            Split::Nodes { per_graph } => {
                for (g, parts) in corpus.graphs.iter().zip(per_graph) {
                    let t = targets_of(g)?;
                    vals.extend(parts[0].iter().map(|&v| t[v]));
                }
            }
            Split::Graphs { train, .. } => {
                for &gi in train {
                    vals.extend_from_slice(targets_of(&corpus.graphs[gi])?);
                }
            }
        }
        Ok(Self::fit(&vals))
    }

    pub fn apply(&self, y: f64) -> f64 {
        (y - self.mean) / self.std
    }

    pub fn invert(&self, z: f64) -> f64 {
        z * self.std + self.mean
    }
}

fn targets_of(g: &Graph) -> Result<&[f64]> {
    g.node_targets
        .as_deref()
        .ok_or_else(|| Error::Config("regression corpus graph lacks node targets".into()))
}

/// Chunks `items` into batches of at most `batch_size`, shuffled first when
/// an RNG is given.
pub fn batches(items: &[usize], batch_size: usize, rng: Option<&mut ChaCha8Rng>) -> Vec<Vec<usize>> {
    let mut items = items.to_vec();
    if let Some(rng) = rng {
        items.shuffle(rng);
    }
    items.chunks(batch_size.max(1)).map(<[usize]>::to_vec).collect()
}
