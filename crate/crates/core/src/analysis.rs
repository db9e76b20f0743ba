//! Distance-preservation studies: correlation of embedding distances with
//! WL tree distances, dense distance matrices and the readout matching bound.

use std::io::Write;
use std::path::Path;

use itertools::Itertools;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hypgeo::raw;
use crate::wlcolor::ColorHierarchy;

/// Studies over at most this many nodes use every pair.
pub const ALL_PAIRS_LIMIT: usize = 4000;
pub const SAMPLED_PAIRS: usize = 100_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Hyperbolic,
    Euclidean,
}

impl Metric {
    pub fn distance(self, a: &[f64], b: &[f64]) -> f64 {
        match self {
            Metric::Hyperbolic => raw::distance(a, b),
            Metric::Euclidean => a
                .iter()
                .zip(b)
                .map(|(x, y)| (x - y) * (x - y))
                .sum::<f64>()
                .sqrt(),
        }
    }
}

impl std::str::FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "hyperbolic" => Ok(Metric::Hyperbolic),
            "euclidean" => Ok(Metric::Euclidean),
            other => Err(Error::Config(format!("unknown metric {other:?}"))),
        }
    }
}

/// Sample Pearson correlation; `None` when either input has zero variance
/// or fewer than two entries.
pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    assert_eq!(x.len(), y.len(), "pearson: length mismatch");
    let n = x.len();
    if n < 2 {
        return None;
    }
    let mx = x.iter().sum::<f64>() / n as f64;
    let my = y.iter().sum::<f64>() / n as f64;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (da, db) = (a - mx, b - my);
        sxy += da * db;
        sxx += da * da;
        syy += db * db;
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return None;
    }
    Some((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Pairwise WL and embedding distances over a set of hierarchy nodes.
#[derive(Debug, Clone)]
pub struct DistanceStudy {
    pub metric: Metric,
    pub node_ids: Vec<usize>,
    /// Index pairs into `node_ids`.
    pub pairs: Vec<(u32, u32)>,
    pub wl: Vec<f64>,
    pub embedded: Vec<f64>,
    pub correlation: Option<f64>,
    pub sampled: bool,
}

/// Correlates `metric` distances between `embeddings[i]` and the WL distance
/// between hierarchy nodes `node_ids[i]`. All pairs are used up to
/// [`ALL_PAIRS_LIMIT`] nodes, otherwise [`SAMPLED_PAIRS`] uniformly drawn
/// pairs of distinct nodes.
pub fn correlation_study(
    h: &ColorHierarchy,
    node_ids: &[usize],
    embeddings: &[Vec<f64>],
    metric: Metric,
    seed: u64,
) -> Result<DistanceStudy> {
    if node_ids.len() != embeddings.len() {
        return Err(Error::DimensionMismatch {
            expected: node_ids.len(),
            got: embeddings.len(),
        });
    }
    if let Some(&bad) = node_ids.iter().find(|&&id| id >= h.len()) {
        return Err(Error::Config(format!("hierarchy has no node {bad}")));
    }
    let n = node_ids.len();
    let sampled = n > ALL_PAIRS_LIMIT;
    let pairs: Vec<(u32, u32)> = if sampled {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..SAMPLED_PAIRS)
            .map(|_| {
                let i = rng.gen_range(0..n);
                let mut j = rng.gen_range(0..n - 1);
                if j >= i {
                    j += 1;
                }
                (i as u32, j as u32)
            })
            .collect()
    } else {
        (0..n as u32).tuple_combinations().collect()
    };
    let wl: Vec<f64> = pairs
        .iter()
        .map(|&(i, j)| h.wl_distance(node_ids[i as usize], node_ids[j as usize]) as f64)
        .collect();
    let embedded: Vec<f64> = pairs
        .iter()
        .map(|&(i, j)| metric.distance(&embeddings[i as usize], &embeddings[j as usize]))
        .collect();
    let correlation = pearson(&wl, &embedded);
    Ok(DistanceStudy {
        metric,
        node_ids: node_ids.to_vec(),
        pairs,
        wl,
        embedded,
        correlation,
        sampled,
    })
}

impl DistanceStudy {
    /// `node_a,node_b,wl_distance,embedding_distance` rows.
    pub fn write_scatter_csv(&self, mut w: impl Write) -> std::io::Result<()> {
        writeln!(w, "node_a,node_b,wl_distance,embedding_distance")?;
        for ((&(i, j), wl), e) in self.pairs.iter().zip(&self.wl).zip(&self.embedded) {
            writeln!(
                w,
                "{},{},{},{}",
                self.node_ids[i as usize], self.node_ids[j as usize], wl, e
            )?;
        }
        Ok(())
    }
}

/// Dense symmetric matrix of pairwise distances.
pub fn distance_matrix(embeddings: &[Vec<f64>], metric: Metric) -> ndarray::Array2<f64> {
    let n = embeddings.len();
    let mut m = ndarray::Array2::zeros((n, n));
    for i in 0..n {
        for j in i + 1..n {
            let d = metric.distance(&embeddings[i], &embeddings[j]);
            m[[i, j]] = d;
            m[[j, i]] = d;
        }
    }
    m
}

/// Header row of ids, then one row per node prefixed by its id.
pub fn write_matrix_csv(ids: &[usize], m: &ndarray::Array2<f64>, mut w: impl Write) -> std::io::Result<()> {
    write!(w, "node_id")?;
    for id in ids {
        write!(w, ",{id}")?;
    }
    writeln!(w)?;
    for (id, row) in ids.iter().zip(m.rows()) {
        write!(w, "{id}")?;
        for v in row {
            write!(w, ",{v}")?;
        }
        writeln!(w)?;
    }
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct StudyReport {
    pub metric: Metric,
    pub correlation: Option<f64>,
    pub n_nodes: usize,
    pub n_pairs: usize,
    pub sampled: bool,
    pub scatter_csv: String,
    pub matrix_csv: String,
}

/// Writes `scatter.csv`, `matrix.csv` and `report.json` under `dir`.
pub fn write_study(study: &DistanceStudy, embeddings: &[Vec<f64>], dir: &Path) -> Result<StudyReport> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let scatter = dir.join("scatter.csv");
    let matrix = dir.join("matrix.csv");
    let open = |p: &Path| {
        std::fs::File::create(p)
            .map(std::io::BufWriter::new)
            .map_err(|e| Error::io(p, e))
    };
    study
        .write_scatter_csv(open(&scatter)?)
        .map_err(|e| Error::io(&scatter, e))?;
    let m = distance_matrix(embeddings, study.metric);
    write_matrix_csv(&study.node_ids, &m, open(&matrix)?).map_err(|e| Error::io(&matrix, e))?;
    let report = StudyReport {
        metric: study.metric,
        correlation: study.correlation,
        n_nodes: study.node_ids.len(),
        n_pairs: study.pairs.len(),
        sampled: study.sampled,
        scatter_csv: scatter.display().to_string(),
        matrix_csv: matrix.display().to_string(),
    };
    let path = dir.join("report.json");
    std::fs::write(&path, serde_json::to_string_pretty(&report)?).map_err(|e| Error::io(&path, e))?;
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatchingBound {
    /// `‖Σ vᵢ − Σ uⱼ‖`.
    pub lhs: f64,
    /// Minimum over one-to-one matchings of `Σ ‖vᵢ − u_π(i)‖`.
    pub rhs: f64,
    pub holds: bool,
}

pub const MATCHING_MAX_NODES: usize = 8;

/// Compares the distance between two sum readouts with the cheapest
/// perfect matching between their summands, by brute force over all
/// permutations.
pub fn matching_bound_check(v: &[Vec<f64>], u: &[Vec<f64>]) -> Result<MatchingBound> {
    let n = v.len();
    if u.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: u.len(),
        });
    }
    if n > MATCHING_MAX_NODES {
        return Err(Error::Config(format!(
            "brute-force matching supports at most {MATCHING_MAX_NODES} vectors, got {n}"
        )));
    }
    let dim = v.first().map_or(0, Vec::len);
    if v.iter().chain(u).any(|x| x.len() != dim) {
        return Err(Error::Config("vectors of differing dimension".into()));
    }
    let sum = |s: &[Vec<f64>]| {
        let mut acc = vec![0.0; dim];
        for x in s {
            acc.iter_mut().zip(x).for_each(|(a, b)| *a += b);
        }
        acc
    };
    let lhs = Metric::Euclidean.distance(&sum(v), &sum(u));
    let cost: Vec<Vec<f64>> = v
        .iter()
        .map(|a| u.iter().map(|b| Metric::Euclidean.distance(a, b)).collect())
        .collect();
    let rhs = (0..n)
        .permutations(n)
        .map(|p| p.iter().enumerate().map(|(i, &j)| cost[i][j]).sum::<f64>())
        .fold(f64::INFINITY, f64::min);
    let rhs = if n == 0 { 0.0 } else { rhs };
    Ok(MatchingBound {
        lhs,
        rhs,
        holds: lhs <= rhs + 1e-9,
    })
}
