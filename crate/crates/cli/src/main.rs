use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use serde_json::json;

use wlhn_core::analysis::{correlation_study, write_study, Metric};
use wlhn_core::datasets::{gen_barabasi_albert, gen_erdos_renyi, Corpus};
use wlhn_core::gradnet::Mode;
use wlhn_core::graph::Graph;
use wlhn_core::sarkar2d::{embed_tree, Tree};
use wlhn_core::train::{load_corpus, train, EpochMetrics, Experiment, RunConfig, RunSummary};
use wlhn_core::wlcolor::ColorHierarchy;
use wlhn_core::wlhn::{write_embeddings_csv, Arm, EmbeddingSpace, Model, PreparedBatch};

const SEED_ENV: &str = "WLHN_SEED";

#[derive(Parser)]
#[command(name = "wlhn", version, about = "Weisfeiler-Leman hierarchies embedded in the Poincaré ball")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic regression corpus.
    Gen(GenArgs),
    /// Train a model from a JSON run configuration.
    Train(TrainArgs),
    /// Export hyperbolic and Euclidean embeddings of the WL hierarchy.
    Embed(EmbedArgs),
    /// Correlate embedding distances with WL-tree distances.
    Analyze(AnalyzeArgs),
    /// Embed a tree in the disk with the combinatorial construction.
    Sarkar(SarkarArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum GenKind {
    Ba,
    Er,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Target {
    Density,
    EffectiveSize,
}

#[derive(clap::Args)]
struct GenArgs {
    #[arg(long, value_enum)]
    kind: GenKind,
    #[arg(long, default_value_t = 1000)]
    n: usize,
    /// Edges per new node (ba only).
    #[arg(long)]
    m: Option<usize>,
    /// Edge probability (er only).
    #[arg(long)]
    p: Option<f64>,
    #[arg(long, default_value_t = 10)]
    graphs: usize,
    /// Must match the kind: density for ba, effective-size for er.
    #[arg(long, value_enum)]
    target: Option<Target>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory; receives corpus.json and meta.json.
    #[arg(long)]
    out: PathBuf,
}

#[derive(clap::Args)]
struct TrainArgs {
    #[arg(long)]
    config: PathBuf,
    /// Also train this arm with the same budget, under `<out>/baseline`.
    #[arg(long, value_enum)]
    baseline: Option<BaselineArm>,
    /// Output directory; overrides `output_dir` from the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Suppress per-epoch progress on standard error.
    #[arg(long)]
    quiet: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum BaselineArm {
    Gin,
}

#[derive(clap::Args)]
struct EmbedArgs {
    #[arg(long)]
    config: PathBuf,
    /// Parameters to load; without it the model is freshly initialized and
    /// batch norm uses batch statistics.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// `all`, `final` or a layer index.
    #[arg(long, default_value = "all")]
    layer: String,
    /// Comma-separated corpus graph indices; defaults to every graph.
    #[arg(long, value_delimiter = ',')]
    graphs: Option<Vec<usize>>,
    /// Write every node instead of one representative per class.
    #[arg(long)]
    all_nodes: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum MetricArg {
    Hyperbolic,
    Euclidean,
}

#[derive(clap::Args)]
struct AnalyzeArgs {
    #[arg(long)]
    embeddings: PathBuf,
    #[arg(long)]
    hierarchy: PathBuf,
    #[arg(long, value_enum, default_value = "hyperbolic")]
    metric: MetricArg,
    /// Pair-sampling seed for large hierarchies.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(clap::Args)]
struct SarkarArgs {
    /// Hierarchy JSON or an edge list (root on the first line, then
    /// `parent child` lines).
    #[arg(long)]
    tree: PathBuf,
    #[arg(long, default_value_t = 1.0)]
    tau: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

/// Errors that are the input's fault rather than the run's.
#[derive(Debug)]
struct Usage(String);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    Usage(msg.into()).into()
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<wlhn_core::Error>() {
            return match e {
                wlhn_core::Error::NonFiniteLoss { .. }
                | wlhn_core::Error::PrecisionExhausted { .. }
                | wlhn_core::Error::NonFinite(_)
                | wlhn_core::Error::Io { .. } => 2,
                _ => 1,
            };
        }
    }
    if err.downcast_ref::<Usage>().is_some() {
        1
    } else {
        2
    }
}

fn seed_override() -> Result<Option<u64>> {
    match std::env::var(SEED_ENV) {
        Ok(s) => s
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| usage(format!("{SEED_ENV}={s:?} is not an unsigned integer"))),
        Err(_) => Ok(None),
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

fn open_out(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(
        File::create(path).with_context(|| format!("writing {}", path.display()))?,
    ))
}

fn cmd_gen(a: GenArgs) -> Result<()> {
    let seed = seed_override()?.unwrap_or(a.seed);
    let corpus = match a.kind {
        GenKind::Ba => {
            if a.p.is_some() {
                return Err(usage("--p applies to er, not ba"));
            }
            if a.target == Some(Target::EffectiveSize) {
                return Err(usage("ba corpora carry the density target"));
            }
            let m = a.m.ok_or_else(|| usage("ba needs --m"))?;
            gen_barabasi_albert(a.n, m, a.graphs, seed).map_err(|e| usage(e.to_string()))?
        }
        GenKind::Er => {
            if a.m.is_some() {
                return Err(usage("--m applies to ba, not er"));
            }
            if a.target == Some(Target::Density) {
                return Err(usage("er corpora carry the effective-size target"));
            }
            let p = a.p.ok_or_else(|| usage("er needs --p"))?;
            gen_erdos_renyi(a.n, p, a.graphs, seed).map_err(|e| usage(e.to_string()))?
        }
    };
    create_dir(&a.out)?;
    corpus.save(&a.out.join("corpus.json"))?;
    let edges: usize = corpus.graphs.iter().map(Graph::num_edges).sum();
    let nodes = corpus.num_nodes();
    let meta = json!({
        "name": corpus.name,
        "task": corpus.task,
        "graphs": corpus.graphs.len(),
        "nodes": nodes,
        "edges": edges,
        "mean_degree": if nodes == 0 { 0.0 } else { 2.0 * edges as f64 / nodes as f64 },
        "generator": corpus.meta,
    });
    write_json(&a.out.join("meta.json"), &meta)
}

fn load_config(path: &Path) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(path)
        .map_err(|e| usage(format!("reading config {}: {e}", path.display())))?;
    if let Some(seed) = seed_override()? {
        cfg.override_seed(seed);
    }
    cfg.validate().map_err(|e| usage(e.to_string()))?;
    Ok(cfg)
}

fn load_experiment(cfg: &RunConfig) -> Result<Experiment> {
    let corpus = load_corpus(&cfg.dataset, cfg.features).map_err(|e| usage(format!("reading dataset: {e}")))?;
    Experiment::new(corpus, cfg).map_err(|e| usage(e.to_string()))
}

fn run_arm(cfg: &RunConfig, exp: &Experiment, arm: Arm, dir: &Path, quiet: bool) -> Result<RunSummary> {
    create_dir(dir)?;
    let mut metrics = open_out(&dir.join("metrics.jsonl"))?;
    let mut write_err = None;
    let result = train(exp, cfg, arm, |m: &EpochMetrics| {
        let line = serde_json::to_string(m).expect("metrics serialize");
        if let Err(e) = writeln!(metrics, "{line}") {
            write_err.get_or_insert(e);
        }
        if !quiet {
            eprintln!(
                "[{arm:?}] epoch {:>4}  loss {:.5}  val {:.5}  test {:.5}",
                m.epoch, m.train_loss, m.val_metric, m.test_metric
            );
        }
    })?;
    if let Some(e) = write_err {
        return Err(e).context("writing metrics.jsonl");
    }
    metrics.flush()?;
    result.model.params.save_checkpoint(&dir.join("checkpoint.json"))?;
    let summary = RunSummary::new(cfg, exp, &result);
    write_json(&dir.join("summary.json"), &summary)?;
    Ok(summary)
}

fn cmd_train(a: TrainArgs) -> Result<()> {
    let cfg = load_config(&a.config)?;
    let out = a
        .out
        .or_else(|| cfg.output_dir.clone())
        .ok_or_else(|| usage("no output directory: pass --out or set output_dir"))?;
    let exp = load_experiment(&cfg)?;
    let main = run_arm(&cfg, &exp, cfg.arm, &out, a.quiet)?;
    let mut line = format!("{:?}: best epoch {}, test {:?} {}", main.arm, main.best_epoch, main.metric, main.test_metric);
    if let Some(BaselineArm::Gin) = a.baseline {
        let base = run_arm(&cfg, &exp, Arm::Gin, &out.join("baseline"), a.quiet)?;
        line += &format!("; baseline Gin: best epoch {}, test {}", base.best_epoch, base.test_metric);
    }
    println!("{line}");
    Ok(())
}

fn cmd_embed(a: EmbedArgs) -> Result<()> {
    let cfg = load_config(&a.config)?;
    let exp = load_experiment(&cfg)?;
    let corpus: &Corpus = &exp.corpus;
    let ids = a.graphs.clone().unwrap_or_else(|| (0..corpus.graphs.len()).collect());
    if let Some(&bad) = ids.iter().find(|&&i| i >= corpus.graphs.len()) {
        return Err(usage(format!("graph {bad} is out of range (corpus has {})", corpus.graphs.len())));
    }
    let layers = cfg.model.layers;
    let layer = match a.layer.as_str() {
        "all" => None,
        "final" => Some(layers),
        s => {
            let t: usize = s.parse().map_err(|_| usage(format!("--layer {s:?}: expected all, final or an index")))?;
            if t > layers {
                return Err(usage(format!("--layer {t} exceeds the model's {layers} layers")));
            }
            Some(t)
        }
    };
    let mut model = Model::new(
        cfg.model.clone(),
        cfg.arm,
        exp.task,
        corpus.feature_dim(),
        exp.output_dim,
        cfg.seeds.init,
    )?;
    let mode = match &a.checkpoint {
        Some(path) => {
            model
                .params
                .load_checkpoint(path)
                .map_err(|e| usage(format!("reading checkpoint: {e}")))?;
            Mode::Eval
        }
        None => Mode::Train,
    };
    let refs: Vec<&Graph> = ids.iter().map(|&i| &corpus.graphs[i]).collect();
    let prep = PreparedBatch::new(&refs, layers);
    let insp = model.inspect_in(&prep, mode);
    create_dir(&a.out)?;
    if cfg.arm == Arm::Wlhn {
        let path = a.out.join("embeddings.csv");
        write_embeddings_csv(open_out(&path)?, &insp, &prep, EmbeddingSpace::Hyperbolic, layer, a.all_nodes)
            .with_context(|| format!("writing {}", path.display()))?;
    }
    let path = a.out.join("embeddings_euclidean.csv");
    write_embeddings_csv(open_out(&path)?, &insp, &prep, EmbeddingSpace::Euclidean, layer, a.all_nodes)
        .with_context(|| format!("writing {}", path.display()))?;
    prep.hierarchy().save(&a.out.join("hierarchy.json"))?;
    Ok(())
}

/// Reads an embedding CSV into `(layer, global node) → coordinates`, using
/// the hierarchy's node-to-graph map to undo per-graph numbering.
fn read_embeddings(path: &Path, h: &ColorHierarchy) -> Result<(HashMap<(usize, usize), Vec<f64>>, usize)> {
    let file = File::open(path).with_context(|| format!("reading {}", path.display()))?;
    let mut offsets = vec![0usize];
    if let Some(graph_of) = h.node_graph() {
        for &g in graph_of {
            if g + 1 >= offsets.len() {
                offsets.resize(g + 2, *offsets.last().unwrap());
            }
            offsets[g + 1] += 1;
        }
        for g in 1..offsets.len() {
            offsets[g] = offsets[g].max(offsets[g - 1]);
        }
    }
    let mut rows = HashMap::new();
    let mut dim = None;
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.with_context(|| format!("reading {}", path.display()))?;
        if i == 0 || line.trim().is_empty() {
            continue;
        }
        let bad = |msg: &str| usage(format!("reading {}:{}: {msg}", path.display(), i + 1));
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() < 4 {
            return Err(bad("expected node_id,graph_id,layer and coordinates"));
        }
        let int = |s: &str| s.trim().parse::<usize>().map_err(|_| bad("bad integer field"));
        let (node, graph, layer) = (int(fields[0])?, int(fields[1])?, int(fields[2])?);
        let coords = fields[3..]
            .iter()
            .map(|s| s.trim().parse::<f64>().map_err(|_| bad("bad coordinate")))
            .collect::<Result<Vec<_>>>()?;
        if *dim.get_or_insert(coords.len()) != coords.len() {
            return Err(bad("rows have different widths"));
        }
        let global = match h.node_graph() {
            Some(_) => offsets.get(graph).copied().ok_or_else(|| bad("graph id not in the hierarchy"))? + node,
            None => node,
        };
        rows.insert((layer, global), coords);
    }
    let dim = dim.ok_or_else(|| usage(format!("reading {}: no embedding rows", path.display())))?;
    Ok((rows, dim))
}

fn cmd_analyze(a: AnalyzeArgs) -> Result<()> {
    let h = ColorHierarchy::load(&a.hierarchy).map_err(|e| usage(format!("reading hierarchy: {e}")))?;
    let (rows, dim) = read_embeddings(&a.embeddings, &h)?;
    let mut ids = Vec::new();
    let mut emb = Vec::new();
    for node in h.nodes() {
        let coords = match usize::try_from(node.depth) {
            Err(_) => vec![0.0; dim],
            Ok(t) => node
                .members
                .iter()
                .find_map(|&v| rows.get(&(t, v)))
                .cloned()
                .ok_or_else(|| {
                    usage(format!(
                        "no embedding row for hierarchy node {} (layer {t}); export every layer with --layer all",
                        node.id
                    ))
                })?,
        };
        ids.push(node.id);
        emb.push(coords);
    }
    let metric = match a.metric {
        MetricArg::Hyperbolic => Metric::Hyperbolic,
        MetricArg::Euclidean => Metric::Euclidean,
    };
    if metric == Metric::Hyperbolic {
        if let Some(row) = emb.iter().find(|r| r.iter().map(|x| x * x).sum::<f64>() >= 1.0) {
            return Err(usage(format!("embedding row {row:?} lies outside the unit ball")));
        }
    }
    let seed = seed_override()?.unwrap_or(a.seed);
    let study = correlation_study(&h, &ids, &emb, metric, seed)?;
    let report = write_study(&study, &emb, &a.out)?;
    match report.correlation {
        Some(c) => println!("{:?} correlation {c:.4} over {} pairs", metric, report.n_pairs),
        None => println!("{:?} correlation undefined (zero variance)", metric),
    }
    Ok(())
}

fn read_tree(path: &Path) -> Result<Tree> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let tree = if text.trim_start().starts_with('{') {
        let h = ColorHierarchy::from_json(&text).map_err(|e| usage(format!("reading {}: {e}", path.display())))?;
        Tree::from_hierarchy(&h)
    } else {
        Tree::from_edge_list(&text)
    };
    tree.map_err(|e| usage(format!("reading {}: {e}", path.display())))
}

fn cmd_sarkar(a: SarkarArgs) -> Result<()> {
    if !(a.tau > 0.0 && a.tau.is_finite()) {
        return Err(usage(format!("--tau must be positive, got {}", a.tau)));
    }
    let tree = read_tree(&a.tree)?;
    let emb = embed_tree(&tree, a.tau)?;
    let seed = seed_override()?.unwrap_or(a.seed);
    let report = emb.distortion_report(seed);
    create_dir(&a.out)?;
    let path = a.out.join("embedding.csv");
    let mut w = open_out(&path)?;
    emb.write_csv(&mut w).with_context(|| format!("writing {}", path.display()))?;
    w.flush()?;
    write_json(&a.out.join("report.json"), &report)?;
    println!(
        "{} nodes, mean distortion {:.4}, max {:.4}",
        report.n_nodes, report.mean_distortion, report.max_distortion
    );
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Gen(a) => cmd_gen(a),
        Command::Train(a) => cmd_train(a),
        Command::Embed(a) => cmd_embed(a),
        Command::Analyze(a) => cmd_analyze(a),
        Command::Sarkar(a) => cmd_sarkar(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
