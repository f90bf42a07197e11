//! End-to-end runs of the `dhan` binary on a small synthetic corpus.

use std::path::Path;
use std::process::{Command, Output};

const CONFIG: &str = r#"
[synth]
users = 80
items_per_category = 15
categories = 3
history_len = 7

[model]
embedding_dim = 4
attention_hidden = [8]
head_hidden = [8, 4]

[train]
epochs = 1
batch_size = 16
eval_every = 10
"#;

fn dhan(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dhan"))
        .current_dir(dir)
        .args(["--config", "run.toml", "--out", "."])
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = dhan(dir, args);
    let stderr = String::from_utf8_lossy(&out.stderr).into_owned();
    assert!(out.status.success(), "{args:?} failed: {stderr}");
    stderr
}

fn workspace() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("run.toml"), CONFIG).unwrap();
    ok(dir.path(), &["synth", "--seed", "1"]);
    dir
}

/// `(users, samples)` from the stats file.
fn stats(dir: &Path) -> (usize, usize) {
    let text = std::fs::read_to_string(dir.join("stats.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("dataset,users,goods,categories,samples"));
    let row: Vec<usize> = lines
        .next()
        .unwrap()
        .split(',')
        .skip(1)
        .map(|v| v.parse().unwrap())
        .collect();
    (row[0], row[3])
}

#[test]
fn dien_mode_yields_two_samples_per_user() {
    let dir = workspace();
    ok(dir.path(), &["prepare", "--seed", "2", "--mode", "dien"]);
    let (users, samples) = stats(dir.path());
    assert_eq!(samples, 2 * users);

    // Every user has history_len reviews: (n - 1) positives, one negative each.
    ok(dir.path(), &["prepare", "--seed", "2"]);
    let (users, samples) = stats(dir.path());
    assert_eq!(samples, 2 * users * 6);
}

#[test]
fn compare_reports_zero_improvement_for_the_baseline() {
    let dir = workspace();
    ok(dir.path(), &["prepare", "--seed", "2"]);
    ok(
        dir.path(),
        &[
            "compare",
            "--seed",
            "3",
            "--runs",
            "2",
            "--variants",
            "dhan,wdl",
            "--baseline",
            "wdl",
        ],
    );
    let agg = std::fs::read_to_string(dir.path().join("aggregate.csv")).unwrap();
    let rows: Vec<Vec<&str>> = agg.lines().skip(1).map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 2);
    let wdl = rows.iter().find(|r| r[0] == "wdl").unwrap();
    assert_eq!(wdl[4].parse::<f64>().unwrap(), 0.0);
    let metrics = std::fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
    assert_eq!(metrics.lines().count(), 1 + 2 * 2);
    for v in ["dhan", "wdl"] {
        for r in 0..2 {
            assert!(dir.path().join(format!("curves/{v}_run{r}.csv")).is_file());
        }
    }
}

#[test]
fn train_eval_attention_round_trip() {
    let dir = workspace();
    ok(dir.path(), &["prepare", "--seed", "2"]);
    ok(dir.path(), &["train", "--seed", "4"]);
    let eval = ok(dir.path(), &["eval"]);
    assert!(eval.lines().any(|l| l.starts_with("dhan: auc ")), "{eval}");
    ok(dir.path(), &["attention", "--limit", "3", "--positives"]);
    let text = std::fs::read_to_string(dir.path().join("attention.jsonl")).unwrap();
    let records: Vec<serde_json::Value> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    let samples: std::collections::BTreeSet<u64> = records.iter().map(|r| r["sample"].as_u64().unwrap()).collect();
    assert_eq!(samples.len(), 3);
    for r in &records {
        let w = r["weight"].as_f64().unwrap();
        assert!((0.0..=1.0).contains(&w));
        assert!(r["level"].is_string() && r["attribute"].is_string() && r["dimension"].is_string());
    }
}

#[test]
fn attention_needs_a_hierarchical_variant() {
    let dir = workspace();
    ok(dir.path(), &["prepare", "--seed", "2"]);
    ok(dir.path(), &["train", "--seed", "4", "--set", "model.variant=din"]);
    let out = dhan(dir.path(), &["attention", "--set", "model.variant=din"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error: "));
}

#[test]
fn unknown_config_key_is_named() {
    let dir = workspace();
    let out = dhan(dir.path(), &["train", "--seed", "1", "--set", "train.lr=0.1"]);
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("unknown field `lr`"), "{stderr}");
}

#[test]
fn invalid_flag_prints_usage() {
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_dhan"))
        .current_dir(dir.path())
        .args(["train", "--bogus"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage:"));
}

#[test]
fn missing_inputs_are_reported() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("run.toml"), CONFIG).unwrap();
    let out = dhan(dir.path(), &["eval"]);
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(
        stderr.contains("dhan.model.json") || stderr.contains("test.tsv"),
        "{stderr}"
    );
}
