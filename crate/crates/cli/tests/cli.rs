use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};

const EXAMPLE_EDGES: [[usize; 2]; 8] = [[0, 3], [0, 4], [1, 2], [1, 3], [1, 4], [2, 5], [2, 6], [5, 6]];

fn wlhn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_wlhn"))
        .args(args)
        .env_remove("WLHN_SEED")
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout: {}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

fn write_json(p: &Path, v: &Value) {
    std::fs::write(p, serde_json::to_string_pretty(v).unwrap()).unwrap();
}

/// Seven-node example graph corpus plus a run config over it.
fn example_setup(dir: &Path, layers: usize, dim: usize) -> PathBuf {
    let corpus = json!({
        "graphs": [{"edges": EXAMPLE_EDGES, "features": vec![[1.0]; 7], "graph_label": 0}],
        "meta": {"name": "example", "task": "graph-classification", "num_classes": 2}
    });
    write_json(&dir.join("example.json"), &corpus);
    let cfg = json!({
        "dataset": {"kind": "corpus", "path": "example.json"},
        "model": {"dim": dim, "layers": layers, "tau": 1.0},
        "optim": {"epochs": 0}
    });
    let path = dir.join("example_cfg.json");
    write_json(&path, &cfg);
    path
}

fn data_lines(p: &Path) -> Vec<String> {
    std::fs::read_to_string(p).unwrap().lines().skip(1).map(str::to_string).collect()
}

#[test]
fn gen_ba_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        ok(&wlhn(&["gen", "--kind", "ba", "--n", "60", "--m", "3", "--graphs", "2", "--seed", "7", "--out", s(out)]));
    }
    let ca = std::fs::read(a.join("corpus.json")).unwrap();
    assert_eq!(ca, std::fs::read(b.join("corpus.json")).unwrap());
    let v: Value = serde_json::from_slice(&ca).unwrap();
    let graphs = v["graphs"].as_array().unwrap();
    assert_eq!(graphs.len(), 2);
    for g in graphs {
        assert_eq!(g["features"].as_array().unwrap().len(), 60);
        assert_eq!(g["edges"].as_array().unwrap().len(), 3 * (60 - 3) + 3);
    }
    assert_eq!(read_json(&a.join("meta.json"))["graphs"], 2);
}

#[test]
fn gen_er_mean_degree() {
    let dir = tempfile::tempdir().unwrap();
    ok(&wlhn(&["gen", "--kind", "er", "--n", "1000", "--p", "0.008", "--graphs", "1", "--out", s(dir.path())]));
    let deg = read_json(&dir.path().join("meta.json"))["mean_degree"].as_f64().unwrap();
    assert!((6.0..=10.0).contains(&deg), "{deg}");
}

#[test]
fn seed_variable_overrides_flag() {
    let dir = tempfile::tempdir().unwrap();
    let run = |out: &Path, seed: Option<&str>| {
        let mut c = Command::new(env!("CARGO_BIN_EXE_wlhn"));
        c.args(["gen", "--kind", "ba", "--n", "40", "--m", "2", "--graphs", "1", "--seed", "1", "--out", s(out)]);
        match seed {
            Some(v) => c.env("WLHN_SEED", v),
            None => c.env_remove("WLHN_SEED"),
        };
        ok(&c.output().unwrap());
        std::fs::read(out.join("corpus.json")).unwrap()
    };
    let plain = run(&dir.path().join("a"), None);
    let same = run(&dir.path().join("b"), Some("1"));
    let other = run(&dir.path().join("c"), Some("2"));
    assert_eq!(plain, same);
    assert_ne!(plain, other);
}

#[test]
fn invalid_flags_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let out = wlhn(&["gen", "--kind", "ba", "--p", "0.1", "--m", "2", "--out", s(dir.path())]);
    assert_eq!(out.status.code(), Some(1));
    assert!(!out.stderr.is_empty());
    let out = wlhn(&["gen", "--kind", "er", "--out", s(dir.path())]);
    assert_eq!(out.status.code(), Some(1));
    let out = wlhn(&["frobnicate"]);
    assert_eq!(out.status.code(), Some(1));
    let out = wlhn(&["train", "--config", s(&dir.path().join("missing.json")), "--out", s(dir.path())]);
    assert_eq!(out.status.code(), Some(1));
}

fn small_train_config(dir: &Path, epochs: usize) -> PathBuf {
    ok(&wlhn(&["gen", "--kind", "ba", "--n", "40", "--m", "2", "--graphs", "2", "--out", s(&dir.join("ba"))]));
    let cfg = json!({
        "dataset": {"kind": "corpus", "path": "ba/corpus.json"},
        "model": {"dim": 8, "layers": 2, "head": [16]},
        "optim": {"epochs": epochs, "batch_size": 1, "lr": 0.01}
    });
    let path = dir.join(format!("cfg{epochs}.json"));
    write_json(&path, &cfg);
    path
}

#[test]
fn train_writes_metrics_checkpoint_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_train_config(dir.path(), 3);
    let (a, b) = (dir.path().join("run_a"), dir.path().join("run_b"));
    ok(&wlhn(&["train", "--config", s(&cfg), "--out", s(&a), "--quiet", "--baseline", "gin"]));
    ok(&wlhn(&["train", "--config", s(&cfg), "--out", s(&b), "--quiet"]));
    let text = std::fs::read_to_string(a.join("metrics.jsonl")).unwrap();
    assert_eq!(text.lines().count(), 4, "epoch 0 plus three trained epochs");
    let first: Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
    for key in ["epoch", "train_loss", "val_metric", "test_metric"] {
        assert!(first.get(key).is_some(), "{key}");
    }
    assert_eq!(
        std::fs::read(a.join("metrics.jsonl")).unwrap(),
        std::fs::read(b.join("metrics.jsonl")).unwrap()
    );
    let summary = read_json(&a.join("summary.json"));
    assert_eq!(summary["metric"], "mse");
    assert_eq!(summary["config"]["optim"]["clip_norm"], 5.0);
    assert!(a.join("checkpoint.json").is_file());
    assert!(a.join("baseline/summary.json").is_file());
    assert_eq!(read_json(&a.join("baseline/summary.json"))["arm"], "gin");
}

#[test]
fn zero_epochs_reports_untrained_evaluation() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_train_config(dir.path(), 0);
    let out = dir.path().join("run");
    ok(&wlhn(&["train", "--config", s(&cfg), "--out", s(&out), "--quiet"]));
    let text = std::fs::read_to_string(out.join("metrics.jsonl")).unwrap();
    assert_eq!(text.lines().count(), 1);
    let summary = read_json(&out.join("summary.json"));
    assert_eq!(summary["best_epoch"], 0);
    assert_eq!(summary["untrained"]["epoch"], 0);
}

#[test]
fn non_finite_loss_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let n = 12;
    let edges: Vec<[usize; 2]> = (1..n).map(|v| [0, v]).collect();
    let corpus = json!({
        "graphs": [{"edges": edges, "features": vec![[1e308]; n], "node_targets": vec![1.0; n]}],
        "meta": {"task": "node-regression"}
    });
    write_json(&dir.path().join("c.json"), &corpus);
    let cfg = json!({"dataset": {"kind": "corpus", "path": "c.json"}, "model": {"dim": 8}, "optim": {"epochs": 2}});
    write_json(&dir.path().join("cfg.json"), &cfg);
    let out = wlhn(&["train", "--config", s(&dir.path().join("cfg.json")), "--out", s(&dir.path().join("o")), "--quiet"]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stderr).contains("non-finite loss"));
}

#[test]
fn embed_and_analyze_example_graph() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = example_setup(dir.path(), 4, 32);
    let emb = dir.path().join("emb");
    ok(&wlhn(&["embed", "--config", s(&cfg), "--out", s(&emb)]));
    let hierarchy = read_json(&emb.join("hierarchy.json"));
    let n_classes = hierarchy["nodes"].as_array().unwrap().len() - 1;
    assert_eq!(data_lines(&emb.join("embeddings.csv")).len(), n_classes);
    assert_eq!(data_lines(&emb.join("embeddings_euclidean.csv")).len(), n_classes);

    let hyp = dir.path().join("hyp");
    let euc = dir.path().join("euc");
    ok(&wlhn(&[
        "analyze", "--embeddings", s(&emb.join("embeddings.csv")), "--hierarchy", s(&emb.join("hierarchy.json")),
        "--metric", "hyperbolic", "--out", s(&hyp),
    ]));
    ok(&wlhn(&[
        "analyze", "--embeddings", s(&emb.join("embeddings_euclidean.csv")), "--hierarchy",
        s(&emb.join("hierarchy.json")), "--metric", "euclidean", "--out", s(&euc),
    ]));
    let rh = read_json(&hyp.join("report.json"));
    let re = read_json(&euc.join("report.json"));
    for key in ["metric", "correlation", "n_nodes", "n_pairs", "sampled", "scatter_csv", "matrix_csv"] {
        assert!(rh.get(key).is_some(), "{key}");
    }
    assert_eq!(rh["metric"], "hyperbolic");
    assert_eq!(rh["n_nodes"], n_classes + 1);
    assert_eq!(rh["sampled"], false);
    let (ch, ce) = (rh["correlation"].as_f64().unwrap(), re["correlation"].as_f64().unwrap());
    assert!(ch >= 0.9, "hyperbolic {ch}");
    assert!(ce < ch, "euclidean {ce} vs hyperbolic {ch}");

    let matrix = std::fs::read_to_string(hyp.join("matrix.csv")).unwrap();
    for (i, line) in matrix.lines().skip(1).enumerate() {
        let cells: Vec<f64> = line.split(',').skip(1).map(|c| c.parse().unwrap()).collect();
        assert_eq!(cells[i], 0.0);
    }
}

#[test]
fn embed_layer_zero_is_one_point() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = example_setup(dir.path(), 4, 32);
    let emb = dir.path().join("emb");
    ok(&wlhn(&["embed", "--config", s(&cfg), "--layer", "0", "--all-nodes", "--out", s(&emb)]));
    let rows = data_lines(&emb.join("embeddings.csv"));
    assert_eq!(rows.len(), 7);
    let points: std::collections::BTreeSet<String> =
        rows.iter().map(|r| r.splitn(4, ',').nth(3).unwrap().to_string()).collect();
    assert_eq!(points.len(), 1);
}

#[test]
fn embed_from_checkpoint_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = example_setup(dir.path(), 2, 8);
    let run = dir.path().join("run");
    ok(&wlhn(&["train", "--config", s(&cfg), "--out", s(&run), "--quiet"]));
    let ck = run.join("checkpoint.json");
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    ok(&wlhn(&["embed", "--config", s(&cfg), "--checkpoint", s(&ck), "--out", s(&a)]));
    ok(&wlhn(&["embed", "--config", s(&cfg), "--checkpoint", s(&ck), "--out", s(&b)]));
    assert_eq!(
        std::fs::read(a.join("embeddings.csv")).unwrap(),
        std::fs::read(b.join("embeddings.csv")).unwrap()
    );
}

#[test]
fn sarkar_path_tree_and_hierarchy() {
    let dir = tempfile::tempdir().unwrap();
    let path_tree = dir.path().join("path.txt");
    std::fs::write(&path_tree, "0\n0 1\n1 2\n2 3\n3 4\n").unwrap();
    let out = dir.path().join("path");
    ok(&wlhn(&["sarkar", "--tree", s(&path_tree), "--tau", "1.0", "--out", s(&out)]));
    let report = read_json(&out.join("report.json"));
    assert!(report["max_distortion"].as_f64().unwrap() < 1e-9);
    assert_eq!(data_lines(&out.join("embedding.csv")).len(), 5);

    let cfg = example_setup(dir.path(), 4, 8);
    let emb = dir.path().join("emb");
    ok(&wlhn(&["embed", "--config", s(&cfg), "--out", s(&emb)]));
    let out = dir.path().join("fig");
    ok(&wlhn(&["sarkar", "--tree", s(&emb.join("hierarchy.json")), "--tau", "1.0", "--out", s(&out)]));
    let h = read_json(&emb.join("hierarchy.json"));
    let rows = data_lines(&out.join("embedding.csv"));
    let point = |id: i64| -> (f64, f64) {
        let r = rows.iter().find(|r| r.split(',').next().unwrap().parse::<i64>().unwrap() == id).unwrap();
        let f: Vec<f64> = r.split(',').skip(1).map(|c| c.parse().unwrap()).collect();
        (f[0], f[1])
    };
    for node in h["nodes"].as_array().unwrap() {
        let Some(parent) = node["parent"].as_i64() else { continue };
        let (a, b) = (point(node["id"].as_i64().unwrap()), point(parent));
        let diff = (a.0 - b.0).powi(2) + (a.1 - b.1).powi(2);
        let den = (1.0 - a.0 * a.0 - a.1 * a.1) * (1.0 - b.0 * b.0 - b.1 * b.1);
        let d = (1.0 + 2.0 * diff / den).acosh();
        assert!((d - 1.0).abs() < 1e-7, "{d}");
    }

    let bad = wlhn(&["sarkar", "--tree", s(&path_tree), "--tau", "0", "--out", s(&dir.path().join("x"))]);
    assert_eq!(bad.status.code(), Some(1));
}
