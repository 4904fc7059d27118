use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use bslrec::config::{EvalConfig, ExperimentConfig};
use bslrec::data::load_dataset;
use bslrec::dro::{uniform_base, worst_case_weights};
use bslrec::eval::{evaluate, EvalReport};
use bslrec::model::{AdamState, Checkpoint, EmbeddingTable};
use bslrec::synthetic::{planted, PlantedConfig};

fn bslrec(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bslrec"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Planted data plus a small config, inside a fresh temp dir.
fn workspace(epochs: usize) -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    let ds = planted(&PlantedConfig {
        n_users: 80,
        n_items: 50,
        ..PlantedConfig::default()
    });
    ds.save(&dir.path().join("train.txt"), &dir.path().join("test.txt")).unwrap();
    fs::write(
        dir.path().join("cfg.toml"),
        format!(
            "train_path = \"train.txt\"\ntest_path = \"test.txt\"\nembedding_dim = 8\nlearning_rate = 0.01\n\
             n_negatives = 16\nbatch_size = 128\nepochs = {epochs}\neval_every = 2\ntau = 0.2\ntau_grid = [0.2]\n"
        ),
    )
    .unwrap();
    dir
}

fn read(p: impl AsRef<Path>) -> Vec<u8> {
    fs::read(p.as_ref()).unwrap_or_else(|e| panic!("{}: {e}", p.as_ref().display()))
}

#[test]
fn ingest_parses_adjacency_lines() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("tr.txt"), "0 1 2\n1 0\n").unwrap();
    fs::write(dir.path().join("te.txt"), "0 3\n").unwrap();
    let o = bslrec(dir.path(), &["ingest", "--train", "tr.txt", "--test", "te.txt", "--out", "norm"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let stats: serde_json::Value = serde_json::from_slice(&read(dir.path().join("norm/stats.json"))).unwrap();
    assert_eq!(stats["n_users"], 2);
    assert_eq!(stats["n_items"], 4);
    let ds = load_dataset(&dir.path().join("norm/train.txt"), &dir.path().join("norm/test.txt")).unwrap();
    assert_eq!(ds.train_lists(), &[vec![1, 2], vec![0]]);
    assert_eq!(ds.item_popularity(), &[1, 1, 1, 0]);

    fs::write(dir.path().join("bad.txt"), "0 1\n1 x\n").unwrap();
    let o = bslrec(dir.path(), &["ingest", "--train", "bad.txt", "--test", "te.txt"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains(":2:"), "{}", stderr(&o));
}

#[test]
fn usage_errors_exit_with_two() {
    let dir = workspace(2);
    let o = bslrec(dir.path(), &["train", "--config", "nowhere.toml"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("nowhere.toml"));

    let o = bslrec(dir.path(), &["train", "--config", "cfg.toml", "--set", "learning_rat=0.1"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("learning_rat"));

    let o = bslrec(dir.path(), &["noise-sweep", "--config", "cfg.toml"]);
    assert_eq!(o.status.code(), Some(2));

    let o = bslrec(dir.path(), &["no-such-command"]);
    assert_eq!(o.status.code(), Some(2));

    let o = bslrec(dir.path(), &["--help"]);
    assert_eq!(o.status.code(), Some(0));
}

#[test]
fn train_writes_artifacts_and_is_reproducible() {
    let dir = workspace(4);
    for out in ["a", "b"] {
        let o = bslrec(dir.path(), &["train", "--config", "cfg.toml", "--out", out]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    let p = dir.path();
    for f in ["manifest.json", "config.toml", "last.ckpt", "best.ckpt", "epochs.csv", "metrics.csv", "report.json"] {
        assert!(p.join("a").join(f).exists(), "missing {f}");
    }
    assert_eq!(read(p.join("a/metrics.csv")), read(p.join("b/metrics.csv")));
    assert_eq!(read(p.join("a/epochs.csv")), read(p.join("b/epochs.csv")));
    let epochs = String::from_utf8(read(p.join("a/epochs.csv"))).unwrap();
    assert_eq!(epochs.lines().count(), 5);

    let manifest: serde_json::Value = serde_json::from_slice(&read(p.join("a/manifest.json"))).unwrap();
    assert_eq!(manifest["train_sha256"].as_str().unwrap().len(), 64);
    assert_eq!(manifest["epoch_secs"].as_array().unwrap().len(), 4);

    let o = bslrec(p, &["train", "--config", "cfg.toml", "--out", "c", "--seed", "99"]);
    assert!(o.status.success());
    assert_ne!(read(p.join("a/epochs.csv")), read(p.join("c/epochs.csv")));
}

#[test]
fn resume_continues_and_refuses_changed_data() {
    let dir = workspace(4);
    let p = dir.path();
    assert!(bslrec(p, &["train", "--config", "cfg.toml", "--out", "full"]).status.success());
    assert!(bslrec(p, &["train", "--config", "cfg.toml", "--out", "part", "--set", "epochs=2"]).status.success());
    let o = bslrec(p, &["train", "--config", "cfg.toml", "--out", "part", "--resume"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(read(p.join("full/metrics.csv")), read(p.join("part/metrics.csv")));
    assert_eq!(read(p.join("full/epochs.csv")), read(p.join("part/epochs.csv")));
    assert_eq!(read(p.join("full/last.ckpt")), read(p.join("part/last.ckpt")));

    let before = read(p.join("part/last.ckpt"));
    let mut train = fs::read_to_string(p.join("train.txt")).unwrap();
    train.push_str("\n");
    train = train.replacen('\n', " 49\n", 1);
    fs::write(p.join("train.txt"), train).unwrap();
    let o = bslrec(p, &["train", "--config", "cfg.toml", "--out", "part", "--resume", "--set", "epochs=6"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("hash"), "{}", stderr(&o));
    assert_eq!(read(p.join("part/last.ckpt")), before);
}

#[test]
fn evaluate_matches_the_library() {
    let dir = workspace(2);
    let p = dir.path();
    assert!(bslrec(p, &["train", "--config", "cfg.toml", "--out", "run"]).status.success());
    let o = bslrec(
        p,
        &["evaluate", "--checkpoint", "run/last.ckpt", "--train", "train.txt", "--test", "test.txt", "--ks", "5,10,15,20", "--out", "ev"],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = String::from_utf8(read(p.join("ev/eval.csv"))).unwrap();
    assert_eq!(csv.lines().filter(|l| l.starts_with("recall,")).count(), 4);
    assert_eq!(csv.lines().filter(|l| l.starts_with("ndcg,")).count(), 4);

    let from_cli: EvalReport = serde_json::from_slice(&o.stdout).unwrap();
    let ckpt = Checkpoint::load(&p.join("run/last.ckpt")).unwrap();
    let ds = load_dataset(&p.join("train.txt"), &p.join("test.txt")).unwrap();
    let cfg = EvalConfig {
        ks: vec![5, 10, 15, 20],
        seed: ExperimentConfig::default().rng_seed,
        ..EvalConfig::default()
    };
    assert_eq!(from_cli, evaluate(&ckpt.table, &ds, &cfg).unwrap());
}

#[test]
fn corrupted_checkpoint_fails_without_output() {
    let dir = workspace(1);
    let p = dir.path();
    assert!(bslrec(p, &["train", "--config", "cfg.toml", "--out", "run"]).status.success());
    let mut bytes = read(p.join("run/last.ckpt"));
    let mid = bytes.len() / 2;
    bytes[mid] ^= 0xff;
    fs::write(p.join("bad.ckpt"), bytes).unwrap();
    let o = bslrec(p, &["evaluate", "--checkpoint", "bad.ckpt", "--config", "cfg.toml", "--out", "ev"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(o.stdout.is_empty());
    assert!(!p.join("ev").exists());
}

#[test]
fn single_cell_sweep_equals_train_and_evaluate() {
    let dir = workspace(3);
    let p = dir.path();
    assert!(bslrec(p, &["train", "--config", "cfg.toml", "--out", "run"]).status.success());
    let o = bslrec(p, &["noise-sweep", "--config", "cfg.toml", "--r-values", "0", "--out", "sw"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let report: EvalReport = serde_json::from_slice(&read(p.join("run/report.json"))).unwrap();
    let mut rdr = csv::Reader::from_path(p.join("sw/sweep.csv")).unwrap();
    let headers = rdr.headers().unwrap().clone();
    let rows: Vec<csv::StringRecord> = rdr.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 1);
    let col = |name: &str| rows[0][headers.iter().position(|h| h == name).unwrap()].parse::<f64>().unwrap();
    assert_eq!(col("ndcg@20"), report.ndcg[&20]);
    assert_eq!(col("recall@20"), report.recall[&20]);
    assert_eq!(col("best_tau"), 0.2);
}

fn write_checkpoint(path: &Path, table: EmbeddingTable) {
    let adam = AdamState::new(&table);
    Checkpoint {
        table,
        adam,
        seed: 0,
        epoch: 0,
    }
    .save(path)
    .unwrap();
}

#[test]
fn dro_diagnose_weights_follow_the_tilt() {
    let dir = workspace(2);
    let p = dir.path();
    let ds = load_dataset(&p.join("train.txt"), &p.join("test.txt")).unwrap();

    // every item identical: all scores tie and the tilt stays uniform
    let flat = EmbeddingTable::from_parts(
        ds.n_users(),
        ds.n_items(),
        2,
        vec![1.0; 2 * ds.n_users()],
        [1.0, 0.5].repeat(ds.n_items()),
    )
    .unwrap();
    write_checkpoint(&p.join("flat.ckpt"), flat);
    let o = bslrec(p, &["dro-diagnose", "--checkpoint", "flat.ckpt", "--config", "cfg.toml", "--taus", "0.1", "--out", "flat"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let mut rdr = csv::Reader::from_path(p.join("flat/weights.csv")).unwrap();
    for rec in rdr.deserialize::<bslrec::experiment::WeightRow>() {
        assert!((rec.unwrap().weight - 1.0 / 16.0).abs() < 1e-15);
    }

    assert!(bslrec(p, &["train", "--config", "cfg.toml", "--out", "run"]).status.success());
    let o = bslrec(p, &["dro-diagnose", "--checkpoint", "run/last.ckpt", "--config", "cfg.toml", "--rows", "8", "--out", "dro"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let rows: Vec<bslrec::experiment::WeightRow> = csv::Reader::from_path(p.join("dro/weights.csv"))
        .unwrap()
        .deserialize()
        .map(Result::unwrap)
        .collect();
    let mut entropies = Vec::new();
    for tau in [0.5, 0.2, 0.1, 0.05] {
        let mine: Vec<_> = rows.iter().filter(|r| r.tau == tau && r.row == 3).collect();
        let scores: Vec<f64> = mine.iter().map(|r| r.score).collect();
        let fresh = worst_case_weights(&scores, &uniform_base(scores.len()), tau).unwrap();
        for (r, w) in mine.iter().zip(&fresh.weights) {
            assert!((r.weight - w).abs() < 1e-12);
        }
        entropies.push(fresh.entropy());
    }
    assert!(entropies.windows(2).all(|w| w[1] < w[0]), "{entropies:?}");
    assert!(p.join("dro/eta_hist.csv").exists());
}

#[test]
fn fairness_report_columns() {
    let dir = workspace(2);
    let p = dir.path();
    assert!(bslrec(p, &["train", "--config", "cfg.toml", "--out", "run"]).status.success());
    let o = bslrec(
        p,
        &["fairness-report", "--config", "cfg.toml", "--checkpoint", "x=run/last.ckpt", "--checkpoint", "y=run/last.ckpt", "--out", "fr"],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let text = String::from_utf8(read(p.join("fr/fairness.csv"))).unwrap();
    assert!(text.starts_with("row,x,y\n"));
    for line in text.lines().skip(1) {
        let cols: Vec<&str> = line.split(',').collect();
        assert_eq!(cols[1], cols[2], "{line}");
    }

    let o = bslrec(p, &["fairness-report", "--config", "cfg.toml", "--checkpoint", "run/last.ckpt", "--n-groups", "1", "--out", "one"]);
    assert!(o.status.success());
    let text = String::from_utf8(read(p.join("one/fairness.csv"))).unwrap();
    let value = |name: &str| -> f64 {
        let line = text.lines().find(|l| l.starts_with(name)).unwrap();
        line.split(',').nth(1).unwrap().parse().unwrap()
    };
    assert!(text.lines().all(|l| !l.starts_with("group_1")));
    assert!((value("group_0") - value("ndcg@20")).abs() < 1e-9);
}
