//! Run configuration, dataset resolution and the training loop with
//! best-validation model selection.

use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::datasets::{
    batches, gen_barabasi_albert, gen_erdos_renyi, load_tud, split, Corpus, Split, SplitUnit, TargetScaler,
    TaskKind,
};
use crate::error::{Error, Result};
use crate::gradnet::{Adam, Forward, Matrix, Mode, ParamStore, Tape, Var};
use crate::graph::Graph;
use crate::hypgeo::diagnostics;
use crate::wlhn::{argmax_rows, Arm, Model, ModelConfig, PreparedBatch};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimConfig {
    pub lr: f64,
    pub epochs: usize,
    /// Graphs per batch.
    pub batch_size: usize,
    /// Global gradient-norm bound.
    pub clip_norm: f64,
}

impl Default for OptimConfig {
    fn default() -> Self {
        OptimConfig {
            lr: 1e-3,
            epochs: 300,
            batch_size: 32,
            clip_norm: 5.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitConfig {
    pub ratios: [f64; 3],
    /// Defaults to nodes for node tasks and graphs otherwise.
    pub unit: Option<SplitUnit>,
    pub seed: u64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig {
            ratios: [0.6, 0.2, 0.2],
            unit: None,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Seeds {
    /// Parameter initialization and dropout masks.
    pub init: u64,
    /// Batch order.
    pub shuffle: u64,
}

/// Where the graphs come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum DatasetSpec {
    /// TUD text files `dir/name_*.txt`.
    Tud { dir: PathBuf, name: String },
    /// A corpus JSON file written by `gen`.
    Corpus { path: PathBuf },
    Ba {
        n: usize,
        m: usize,
        graphs: usize,
        #[serde(default)]
        seed: u64,
    },
    Er {
        n: usize,
        p: f64,
        graphs: usize,
        #[serde(default)]
        seed: u64,
    },
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureMode {
    /// Whatever the dataset provides.
    #[default]
    Dataset,
    /// A single feature 1 per node.
    Constant,
    /// One-hot node degree.
    Degree,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Overrides the task stored with the dataset.
    #[serde(default)]
    pub task: Option<TaskKind>,
    pub dataset: DatasetSpec,
    #[serde(default)]
    pub features: FeatureMode,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub arm: Arm,
    #[serde(default)]
    pub optim: OptimConfig,
    #[serde(default)]
    pub split: SplitConfig,
    #[serde(default)]
    pub seeds: Seeds,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    /// Reads a config file; relative dataset and output paths are taken
    /// relative to the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_json(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        let rebase = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        match &mut cfg.dataset {
            DatasetSpec::Tud { dir, .. } => rebase(dir),
            DatasetSpec::Corpus { path } => rebase(path),
            _ => {}
        }
        if let Some(out) = &mut cfg.output_dir {
            rebase(out);
        }
        Ok(cfg)
    }

    /// Replaces the initialization, shuffle and split seeds.
    pub fn override_seed(&mut self, seed: u64) {
        self.seeds = Seeds { init: seed, shuffle: seed };
        self.split.seed = seed;
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        let o = &self.optim;
        if !(o.lr > 0.0 && o.lr.is_finite()) {
            return Err(Error::Config(format!("lr must be positive, got {}", o.lr)));
        }
        if o.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if !(o.clip_norm > 0.0) {
            return Err(Error::Config(format!("clip_norm must be positive, got {}", o.clip_norm)));
        }
        let r = self.split.ratios;
        if r.iter().any(|x| !(0.0..=1.0).contains(x)) || (r.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("split ratios {r:?} must be in [0, 1] and sum to 1")));
        }
        let missing = |p: &Path| Err(Error::Config(format!("{} does not exist", p.display())));
        match &self.dataset {
            DatasetSpec::Tud { dir, .. } if !dir.is_dir() => missing(dir),
            DatasetSpec::Corpus { path } if !path.is_file() => missing(path),
            _ => Ok(()),
        }
    }

    /// Departures from the usual search grid, for the run summary.
    pub fn grid_notes(&self) -> Vec<String> {
        let mut notes = self.model.grid_notes();
        if self.optim.lr != 1e-3 && self.optim.lr != 1e-2 {
            notes.push(format!("lr {} is outside {{1e-3, 1e-2}}", self.optim.lr));
        }
        notes
    }
}

pub fn load_corpus(spec: &DatasetSpec, features: FeatureMode) -> Result<Corpus> {
    let corpus = match spec {
        DatasetSpec::Tud { dir, name } => load_tud(dir, name)?.0,
        DatasetSpec::Corpus { path } => Corpus::load(path)?,
        DatasetSpec::Ba { n, m, graphs, seed } => gen_barabasi_albert(*n, *m, *graphs, *seed)?,
        DatasetSpec::Er { n, p, graphs, seed } => gen_erdos_renyi(*n, *p, *graphs, *seed)?,
    };
    Ok(match features {
        FeatureMode::Dataset => corpus,
        FeatureMode::Constant => corpus.with_constant_features(),
        FeatureMode::Degree => corpus.with_degree_features(),
    })
}

/// What the validation and test numbers measure.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MetricKind {
    /// Fraction of correct argmax predictions; higher is better.
    Accuracy,
    /// Mean squared error on standardized targets; lower is better.
    Mse,
}

impl MetricKind {
    pub fn for_task(task: TaskKind) -> Self {
        match task {
            TaskKind::NodeRegression => MetricKind::Mse,
            _ => MetricKind::Accuracy,
        }
    }

    pub fn better(self, a: f64, b: f64) -> bool {
        match self {
            MetricKind::Accuracy => a > b,
            MetricKind::Mse => a < b,
        }
    }
}

/// One line of the metrics stream. Epoch 0 is the untrained model, whose
/// train loss is measured in evaluation mode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_metric: f64,
    pub test_metric: f64,
}

/// A corpus with its split, target scaling and precomputed evaluation
/// batches.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub corpus: Corpus,
    pub task: TaskKind,
    pub split: Split,
    pub scaler: Option<TargetScaler>,
    pub output_dim: usize,
    eval_batches: Vec<(Vec<usize>, PreparedBatch)>,
    layers: usize,
}

fn max_plus_one(it: impl Iterator<Item = usize>) -> usize {
    it.max().map_or(0, |m| m + 1)
}

impl Experiment {
    pub fn new(mut corpus: Corpus, cfg: &RunConfig) -> Result<Self> {
        let task = cfg.task.unwrap_or(corpus.task);
        corpus.task = task;
        if corpus.graphs.is_empty() {
            return Err(Error::Config("the corpus has no graphs".into()));
        }
        let unit = cfg.split.unit.unwrap_or(match task {
            TaskKind::GraphClassification => SplitUnit::Graph,
            _ => SplitUnit::Node,
        });
        if task == TaskKind::GraphClassification && unit == SplitUnit::Node {
            return Err(Error::Config("graph classification needs a graph-level split".into()));
        }
        let split = split(&corpus, cfg.split.ratios, unit, cfg.split.seed)?;
        let (scaler, output_dim) = match task {
            TaskKind::NodeRegression => (Some(TargetScaler::fit_train(&corpus, &split)?), 1),
            TaskKind::GraphClassification => {
                let labels = corpus
                    .graphs
                    .iter()
                    .map(|g| g.graph_label.ok_or_else(|| Error::Config("graph without a label".into())))
                    .collect::<Result<Vec<_>>>()?;
                let k = corpus.num_classes.unwrap_or(0).max(max_plus_one(labels.into_iter()));
                (None, k)
            }
            TaskKind::NodeClassification => {
                let mut all = Vec::new();
                for g in &corpus.graphs {
                    all.extend(
                        g.node_classes
                            .as_ref()
                            .ok_or_else(|| Error::Config("graph without node classes".into()))?,
                    );
                }
                let k = corpus.num_classes.unwrap_or(0).max(max_plus_one(all.into_iter()));
                (None, k)
            }
        };
        if output_dim == 0 {
            return Err(Error::Config("no classes found".into()));
        }
        let layers = cfg.model.layers;
        let all: Vec<usize> = (0..corpus.graphs.len()).collect();
        let eval_batches = batches(&all, cfg.optim.batch_size, None)
            .into_iter()
            .map(|ids| {
                let refs: Vec<&Graph> = ids.iter().map(|&i| &corpus.graphs[i]).collect();
                let prep = PreparedBatch::new(&refs, layers);
                (ids, prep)
            })
            .collect();
        Ok(Experiment {
            corpus,
            task,
            split,
            scaler,
            output_dim,
            eval_batches,
            layers,
        })
    }

    pub fn metric(&self) -> MetricKind {
        MetricKind::for_task(self.task)
    }

    /// Graphs visited by a training epoch.
    fn train_graphs(&self) -> Vec<usize> {
        match &self.split {
            Split::Graphs { train, .. } => train.clone(),
            Split::Nodes { .. } => (0..self.corpus.graphs.len()).collect(),
        }
    }

    /// Node-level part (0 train, 1 val, 2 test) of every graph; `None` for
    /// graph-level splits.
    fn node_part(&self, g: usize, part: usize) -> Option<&[usize]> {
        match &self.split {
            Split::Nodes { per_graph } => Some(&per_graph[g][part]),
            Split::Graphs { .. } => None,
        }
    }

    fn graph_part(&self, g: usize) -> Option<usize> {
        match &self.split {
            Split::Graphs { train, val, test } => [train, val, test].iter().position(|p| p.contains(&g)),
            Split::Nodes { .. } => None,
        }
    }

    fn scaled_target(&self, g: usize, v: usize) -> f64 {
        let y = self.corpus.graphs[g].node_targets.as_ref().expect("checked at setup")[v];
        self.scaler.expect("regression task").apply(y)
    }
}

/// Rows of `output` that enter the loss, with their targets.
enum Targets {
    Classes(Vec<usize>),
    Values(Matrix),
}

/// Selects the supervised rows of a batch for split `part`.
fn batch_targets(exp: &Experiment, ids: &[usize], prep: &PreparedBatch, part: usize) -> (Vec<usize>, Targets) {
    match exp.task {
        TaskKind::GraphClassification => {
            let rows: Vec<usize> = (0..ids.len()).filter(|&i| exp.graph_part(ids[i]) == Some(part)).collect();
            let labels = rows
                .iter()
                .map(|&i| exp.corpus.graphs[ids[i]].graph_label.expect("checked at setup"))
                .collect();
            (rows, Targets::Classes(labels))
        }
        TaskKind::NodeRegression | TaskKind::NodeClassification => {
            let mut rows = Vec::new();
            let mut pairs = Vec::new();
            for (b, &g) in ids.iter().enumerate() {
                for &v in exp.node_part(g, part).expect("node split") {
                    rows.push(prep.batch.offsets[b] + v);
                    pairs.push((g, v));
                }
            }
            let targets = if exp.task == TaskKind::NodeRegression {
                Targets::Values(Matrix::from_shape_fn((pairs.len(), 1), |(i, _)| {
                    exp.scaled_target(pairs[i].0, pairs[i].1)
                }))
            } else {
                Targets::Classes(
                    pairs
                        .iter()
                        .map(|&(g, v)| exp.corpus.graphs[g].node_classes.as_ref().expect("checked at setup")[v])
                        .collect(),
                )
            };
            (rows, targets)
        }
    }
}

fn loss_of(t: &Tape, output: Var, rows: Vec<usize>, targets: &Targets) -> Var {
    let sel = t.gather_rows(output, rows);
    match targets {
        Targets::Classes(labels) => t.cross_entropy(sel, labels),
        Targets::Values(y) => t.mse(sel, y),
    }
}

/// Loss and metric of the model on each of train, validation and test, from
/// one evaluation-mode pass over the corpus.
pub fn evaluate(model: &Model, exp: &Experiment) -> [(f64, f64); 3] {
    assert_eq!(model.config.layers, exp.layers, "model depth differs from the prepared batches");
    let mut loss_sum = [0.0; 3];
    let mut score_sum = [0.0; 3];
    let mut count = [0usize; 3];
    for (ids, prep) in &exp.eval_batches {
        let insp = model.inspect(prep);
        for part in 0..3 {
            let (rows, targets) = batch_targets(exp, ids, prep, part);
            if rows.is_empty() {
                continue;
            }
            let out = insp.output.select(ndarray::Axis(0), &rows);
            let tape = Tape::new();
            let loss = tape.scalar(loss_of(&tape, tape.constant(out.clone()), (0..rows.len()).collect(), &targets));
            let n = rows.len();
            loss_sum[part] += loss * n as f64;
            score_sum[part] += match &targets {
                Targets::Classes(labels) => argmax_rows(&out)
                    .iter()
                    .zip(labels)
                    .filter(|(p, l)| p == l)
                    .count() as f64,
                Targets::Values(_) => loss * n as f64,
            };
            count[part] += n;
        }
    }
    std::array::from_fn(|p| {
        if count[p] == 0 {
            (f64::NAN, f64::NAN)
        } else {
            (loss_sum[p] / count[p] as f64, score_sum[p] / count[p] as f64)
        }
    })
}

/// Outcome of [`train`]: the model restored to its best-validation epoch.
#[derive(Debug, Clone)]
pub struct TrainResult {
    pub model: Model,
    pub history: Vec<EpochMetrics>,
    pub best_epoch: usize,
    pub best_val: f64,
    /// Test metric at the best-validation epoch.
    pub test_metric: f64,
    pub metric: MetricKind,
}

/// One optimization step on a training batch; returns the batch loss and the
/// number of supervised rows.
fn train_step(
    model: &mut Model,
    exp: &Experiment,
    ids: &[usize],
    adam: &Adam,
    clip: f64,
    seed: u64,
    epoch: usize,
) -> Result<Option<(f64, usize)>> {
    let refs: Vec<&Graph> = ids.iter().map(|&i| &exp.corpus.graphs[i]).collect();
    let prep = PreparedBatch::new(&refs, exp.layers);
    let (rows, targets) = batch_targets(exp, ids, &prep, 0);
    if rows.is_empty() {
        return Ok(None);
    }
    let n = rows.len();
    let tape = Tape::new();
    let fwd = Forward::new(&tape, &model.params, Mode::Train, seed);
    let out = model.forward(&fwd, &prep);
    let loss = loss_of(&tape, out.output, rows, &targets);
    let value = tape.scalar(loss);
    let non_finite = |params: &ParamStore| Error::NonFiniteLoss {
        epoch,
        grad_norm: params.grad_norm(),
        clamps: diagnostics::snapshot().total(),
    };
    if !value.is_finite() {
        return Err(non_finite(&model.params));
    }
    let grads = tape.backward(loss);
    model.params.accumulate(&fwd, &grads);
    let updates = fwd.take_updates();
    drop(fwd);
    model.params.apply_updates(updates);
    let norm = model.params.clip_grad_norm(clip);
    if !norm.is_finite() {
        return Err(non_finite(&model.params));
    }
    adam.step(&mut model.params);
    Ok(Some((value, n)))
}

/// Trains a fresh model for `cfg.optim.epochs` epochs. `on_epoch` sees
/// every metrics line as it is produced, starting with the untrained
/// evaluation at epoch 0. The returned model holds the parameters of the
/// epoch with the best validation metric (earliest on ties).
pub fn train(
    exp: &Experiment,
    cfg: &RunConfig,
    arm: Arm,
    mut on_epoch: impl FnMut(&EpochMetrics),
) -> Result<TrainResult> {
    cfg.model.validate()?;
    let metric = exp.metric();
    let mut model = Model::new(
        cfg.model.clone(),
        arm,
        exp.task,
        exp.corpus.feature_dim(),
        exp.output_dim,
        cfg.seeds.init,
    )?;
    let adam = Adam::new(cfg.optim.lr);
    let mut shuffle = ChaCha8Rng::seed_from_u64(cfg.seeds.shuffle);
    let train_graphs = exp.train_graphs();

    let [tr, va, te] = evaluate(&model, exp);
    let first = EpochMetrics {
        epoch: 0,
        train_loss: tr.0,
        val_metric: va.1,
        test_metric: te.1,
    };
    on_epoch(&first);
    let mut history = vec![first];
    let mut best = (0, va.1, te.1, model.params.clone());
    let mut step: u64 = 0;

    for epoch in 1..=cfg.optim.epochs {
        let (mut sum, mut count) = (0.0, 0usize);
        for ids in batches(&train_graphs, cfg.optim.batch_size, Some(&mut shuffle)) {
            step += 1;
            let seed = cfg.seeds.init ^ step.wrapping_mul(0x9E37_79B9_7F4A_7C15);
            if let Some((loss, n)) = train_step(&mut model, exp, &ids, &adam, cfg.optim.clip_norm, seed, epoch)? {
                sum += loss * n as f64;
                count += n;
            }
        }
        let [_, va, te] = evaluate(&model, exp);
        let m = EpochMetrics {
            epoch,
            train_loss: sum / count.max(1) as f64,
            val_metric: va.1,
            test_metric: te.1,
        };
        on_epoch(&m);
        history.push(m);
        if metric.better(va.1, best.1) || best.1.is_nan() {
            best = (epoch, va.1, te.1, model.params.clone());
        }
    }
    let (best_epoch, best_val, test_metric, params) = best;
    model.params = params;
    Ok(TrainResult {
        model,
        history,
        best_epoch,
        best_val,
        test_metric,
        metric,
    })
}

/// Echo of a finished run.
#[derive(Debug, Clone, Serialize)]
pub struct RunSummary {
    pub config: RunConfig,
    pub arm: Arm,
    pub task: TaskKind,
    pub metric: MetricKind,
    pub epochs: usize,
    pub best_epoch: usize,
    pub best_val: f64,
    pub test_metric: f64,
    pub untrained: EpochMetrics,
    pub n_graphs: usize,
    pub n_nodes: usize,
    pub input_dim: usize,
    pub output_dim: usize,
    pub target_scaler: Option<TargetScaler>,
    pub grid_notes: Vec<String>,
}

impl RunSummary {
    pub fn new(cfg: &RunConfig, exp: &Experiment, result: &TrainResult) -> Self {
        RunSummary {
            config: cfg.clone(),
            arm: result.model.arm,
            task: exp.task,
            metric: result.metric,
            epochs: cfg.optim.epochs,
            best_epoch: result.best_epoch,
            best_val: result.best_val,
            test_metric: result.test_metric,
            untrained: result.history[0],
            n_graphs: exp.corpus.graphs.len(),
            n_nodes: exp.corpus.num_nodes(),
            input_dim: exp.corpus.feature_dim(),
            output_dim: exp.output_dim,
            target_scaler: exp.scaler,
            grid_notes: cfg.grid_notes(),
        }
    }
}
