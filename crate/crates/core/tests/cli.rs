//! The `topoclass` binary end to end.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_topoclass"));
    c.env_remove("TOPOCLASS_METRICS");
    c
}

fn ok(cmd: &mut Command) -> String {
    let out = cmd.output().unwrap();
    assert!(
        out.status.success(),
        "{cmd:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn fails(cmd: &mut Command) -> Output {
    let out = cmd.output().unwrap();
    assert!(!out.status.success(), "{cmd:?} unexpectedly succeeded");
    out
}

/// Value of `key=` in a line of space-separated `key=value` pairs.
fn field<'a>(text: &'a str, key: &str) -> Option<&'a str> {
    text.split_whitespace()
        .find_map(|w| w.strip_prefix(key).and_then(|r| r.strip_prefix('=')))
}

fn auc_map(path: &Path) -> serde_json::Map<String, serde_json::Value> {
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap();
    v["auc"].as_object().unwrap().clone()
}

fn small_dataset(dir: &Path, events: usize) {
    ok(bin()
        .args([
            "generate",
            "--events",
            &events.to_string(),
            "--seed",
            "4",
            "--out",
        ])
        .arg(dir.join("ev.hep")));
    ok(bin()
        .args(["prepare", "--seed", "4", "--input"])
        .arg(dir.join("ev.hep"))
        .arg("--out")
        .arg(dir.join("ds")));
}

#[test]
fn commands_agree_with_each_other() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(bin()
        .args(["generate", "--events", "3000", "--seed", "2", "--out"])
        .arg(d.join("ev.hep")));
    let hep = ok(bin().arg("inspect").arg(d.join("ev.hep")));
    assert_eq!(field(&hep, "events"), Some("3000"));

    let prep = ok(bin()
        .args(["prepare", "--seed", "2", "--shards", "3", "--input"])
        .arg(d.join("ev.hep"))
        .arg("--out")
        .arg(d.join("ds")));
    let balanced: usize = field(&prep, "balanced").unwrap().parse().unwrap();
    let train: usize = field(&prep, "train").unwrap().parse().unwrap();
    assert_eq!(train, balanced * 4 / 5);
    let ds = ok(bin().arg("inspect").arg(d.join("ds")));
    let line = ds
        .lines()
        .find(|l| l.starts_with("train_records="))
        .unwrap();
    assert_eq!(
        field(line, "train_records"),
        Some(train.to_string().as_str())
    );
    assert_eq!(field(line, "expected"), field(line, "train_records"));

    let run = d.join("run");
    let out = ok(bin()
        .args([
            "train", "--model", "hlf", "--epochs", "3", "--seed", "2", "--data",
        ])
        .arg(d.join("ds"))
        .arg("--run-dir")
        .arg(&run));
    assert!(out.contains("steps="), "{out}");
    let loss = fs::read_to_string(run.join("loss.csv")).unwrap();
    assert_eq!(loss.lines().count(), 4);
    for f in [
        "model.mdl",
        "checkpoints/epoch-003.mdl",
        "job.json",
        "digests.csv",
        "metrics.ndjson",
    ] {
        assert!(run.join(f).exists(), "{f} missing");
    }

    let eval = ok(bin()
        .arg("evaluate")
        .arg("--model")
        .arg(run.join("model.mdl"))
        .arg("--data")
        .arg(d.join("ds"))
        .arg("--out")
        .arg(d.join("eval")));
    assert!(eval.contains("confusion="));
    let during = auc_map(&run.join("eval/report.json"));
    let after = auc_map(&d.join("eval/report.json"));
    assert_eq!(during.len(), 3);
    for (class, a) in &during {
        let b = after[class].as_f64().unwrap();
        assert!(
            (a.as_f64().unwrap() - b).abs() < 1e-12,
            "{class}: {a} vs {b}"
        );
        assert!(d.join(format!("eval/roc_{class}.csv")).exists());
    }

    let mdl = ok(bin().arg("inspect").arg(run.join("model.mdl")));
    assert!(mdl.starts_with("model=hlf params=2013 epoch=3"), "{mdl}");
}

#[test]
fn flags_override_the_config_file_which_overrides_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = d.join("cfg.toml");
    fs::write(&cfg, "[generate]\nevents = 40\nseed = 9\n").unwrap();
    ok(bin()
        .arg("--config")
        .arg(&cfg)
        .args(["generate", "--out"])
        .arg(d.join("a.hep")));
    ok(bin()
        .arg("--config")
        .arg(&cfg)
        .args(["generate", "--events", "25", "--out"])
        .arg(d.join("b.hep")));
    ok(bin()
        .args(["generate", "--seed", "9", "--events", "40", "--out"])
        .arg(d.join("c.hep")));
    assert_eq!(
        field(&ok(bin().arg("inspect").arg(d.join("a.hep"))), "events"),
        Some("40")
    );
    assert_eq!(
        field(&ok(bin().arg("inspect").arg(d.join("b.hep"))), "events"),
        Some("25")
    );
    // the seed came from the file
    assert_eq!(
        fs::read(d.join("a.hep")).unwrap(),
        fs::read(d.join("c.hep")).unwrap()
    );

    fs::write(&cfg, "[generate]\nevnets = 40\n").unwrap();
    let out = fails(
        bin()
            .arg("--config")
            .arg(&cfg)
            .args(["generate", "--out"])
            .arg(d.join("x.hep")),
    );
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown key \"evnets\""));
    fs::write(&cfg, "[genrate]\nevents = 1\n").unwrap();
    let out = fails(
        bin()
            .arg("--config")
            .arg(&cfg)
            .args(["generate", "--out"])
            .arg(d.join("x.hep")),
    );
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown table [genrate]"));
}

#[test]
fn usage_errors_exit_2_and_runtime_errors_print_one_line() {
    let out = fails(bin().args(["train", "--no-such-flag"]));
    assert_eq!(out.status.code(), Some(2));
    let out = fails(bin().args(["generate", "--events", "many"]));
    assert_eq!(out.status.code(), Some(2));

    let dir = tempfile::tempdir().unwrap();
    let out = fails(
        bin()
            .args(["prepare", "--input"])
            .arg(dir.path().join("missing.hep"))
            .arg("--out")
            .arg(dir.path().join("ds")),
    );
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8(out.stderr).unwrap();
    assert_eq!(err.lines().count(), 1, "{err}");
    assert!(err.starts_with("error[features]: "), "{err}");

    let bad = dir.path().join("bad.rec");
    fs::write(&bad, b"not a record file at all").unwrap();
    let out = fails(bin().arg("inspect").arg(&bad));
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(err.starts_with("error[event-format]: "), "{err}");
}

#[test]
fn metrics_go_to_the_file_named_by_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let metrics = d.join("m.ndjson");
    ok(bin()
        .env("TOPOCLASS_METRICS", &metrics)
        .args(["generate", "--events", "500", "--out"])
        .arg(d.join("ev.hep")));
    ok(bin()
        .env("TOPOCLASS_METRICS", &metrics)
        .args(["prepare", "--input"])
        .arg(d.join("ev.hep"))
        .arg("--out")
        .arg(d.join("ds")));
    let text = fs::read_to_string(&metrics).unwrap();
    let records: Vec<serde_json::Value> = text
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    let stages: Vec<&str> = records
        .iter()
        .map(|r| r["stage"].as_str().unwrap())
        .collect();
    assert_eq!(stages, ["generate", "prepare"]);
    for r in &records {
        assert!(r["timestamp"].as_str().unwrap().ends_with('Z'));
        assert!(r["examples_per_sec"].as_f64().unwrap() > 0.0);
        assert!(r["bytes_per_sec"].as_f64().unwrap() > 0.0);
    }
}

#[test]
fn spawned_workers_train_with_the_coordinator() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    small_dataset(d, 3000);
    let run = d.join("run");
    let out = ok(bin()
        .args([
            "train",
            "--workers",
            "2",
            "--spawn",
            "--epochs",
            "2",
            "--batch",
            "16",
        ])
        .args([
            "--digest-every",
            "5",
            "--coordinator",
            "127.0.0.1:0",
            "--data",
        ])
        .arg(d.join("ds"))
        .arg("--run-dir")
        .arg(&run));
    assert!(out.contains("coordinator listening on 127.0.0.1:"), "{out}");
    let digests = fs::read_to_string(run.join("digests.csv")).unwrap();
    assert!(digests.lines().count() > 2, "{digests}");
    let job: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(run.join("job.json")).unwrap()).unwrap();
    assert_eq!(job["world_size"], 2);
}

#[test]
fn tune_writes_a_ranked_table() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    small_dataset(d, 2000);
    let grid = d.join("grid.toml");
    fs::write(&grid, "[axes]\nlayers = [1, 2]\nlr = [0.001, 0.01]\n").unwrap();
    ok(bin()
        .args([
            "tune",
            "--folds",
            "3",
            "--epochs",
            "2",
            "--parallelism",
            "2",
            "--grid",
        ])
        .arg(&grid)
        .arg("--data")
        .arg(d.join("ds"))
        .arg("--out")
        .arg(d.join("tune")));
    let csv = fs::read_to_string(d.join("tune/tune.csv")).unwrap();
    assert_eq!(csv.lines().count(), 5, "{csv}");
    let best: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(d.join("tune/best.json")).unwrap()).unwrap();
    assert_eq!(best["rank"], 1);
}
