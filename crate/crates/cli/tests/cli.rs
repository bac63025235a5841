use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_transit-sense"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok_summary(args: &[&str]) -> Value {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["status"], "ok");
    v["summary"].clone()
}

fn path(dir: &Path, name: &str) -> String {
    dir.join(name).to_str().unwrap().to_string()
}

#[test]
fn simulate_cluster_timetable_and_stream() {
    let dir = tempfile::tempdir().unwrap();
    let sim = path(dir.path(), "sim");
    let s = ok_summary(&[
        "--out",
        &sim,
        "--seed",
        "2",
        "simulate",
        "--scenario",
        "clean",
    ]);
    assert_eq!(s["trains"], 8);
    for f in [
        "trace.jsonl",
        "true_timetable.csv",
        "topology.json",
        "summary.json",
    ] {
        assert!(dir.path().join("sim").join(f).exists(), "{f}");
    }
    let trace = path(&dir.path().join("sim"), "trace.jsonl");
    let topo = path(&dir.path().join("sim"), "topology.json");

    for method in ["spectral", "baseline"] {
        let out = path(dir.path(), method);
        let s = ok_summary(&[
            "--out",
            &out,
            "cluster",
            "--trace",
            &trace,
            "--topology",
            &topo,
            "--method",
            method,
        ]);
        assert_eq!(s["trains"], 8, "{method}");
        assert!(dir.path().join(method).join("clusters.csv").exists());
    }

    let tt = path(dir.path(), "tt");
    ok_summary(&[
        "--out",
        &tt,
        "timetable",
        "--trace",
        &trace,
        "--stations",
        "10",
    ]);
    let headways = fs::read_to_string(dir.path().join("tt/headways.csv")).unwrap();
    assert!(headways.lines().count() > 1);
    let expected = fs::read(dir.path().join("tt/timetable.csv")).unwrap();

    for batch in ["30", "300", "0"] {
        let out = path(dir.path(), &format!("stream{batch}"));
        ok_summary(&[
            "--out",
            &out,
            "stream",
            "--trace",
            &trace,
            "--topology",
            &topo,
            "--batch-seconds",
            batch,
        ]);
        let got = fs::read(Path::new(&out).join("timetable.csv")).unwrap();
        assert_eq!(got, expected, "batch {batch}");
        assert!(Path::new(&out).join("stream_rows.csv").exists());
    }
}

#[test]
fn evaluate_reports_clean_recovery() {
    let dir = tempfile::tempdir().unwrap();
    let out = path(dir.path(), "eval");
    let s = ok_summary(&[
        "--out",
        &out,
        "evaluate",
        "--scenario",
        "clean",
        "--seeds",
        "2",
    ]);
    assert_eq!(s["spectral"]["hit_rate"], 1.0);
    assert_eq!(s["spectral_ari"], 1.0);
    let csv = fs::read_to_string(dir.path().join("eval/evaluation.csv")).unwrap();
    assert!(csv.lines().count() >= 3);
}

#[test]
fn dsg_train_then_predict() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = path(dir.path(), "dsg.json");
    fs::write(&cfg, r#"{"train_days":[0],"test_days":[100]}"#).unwrap();
    let model_dir = path(dir.path(), "model");
    let s = ok_summary(&["--out", &model_dir, "--config", &cfg, "dsg-train"]);
    assert!(s["train_samples"].as_u64().unwrap() > 0);
    let model = path(&dir.path().join("model"), "model.json");
    assert!(Path::new(&model).exists());

    let sim = path(dir.path(), "sim");
    ok_summary(&[
        "--out",
        &sim,
        "--seed",
        "7",
        "simulate",
        "--scenario",
        "dsg",
    ]);
    let sim = dir.path().join("sim");
    let pred = path(dir.path(), "pred");
    let s = ok_summary(&[
        "--out",
        &pred,
        "dsg-predict",
        "--trace",
        &path(&sim, "trace.jsonl"),
        "--topology",
        &path(&sim, "topology.json"),
        "--model",
        &model,
        "--gates",
        &path(&sim, "gate_counts.csv"),
    ]);
    assert!(s["departures"].as_u64().unwrap() > 0);
    let rows = fs::read_to_string(dir.path().join("pred/predictions.csv")).unwrap();
    assert_eq!(
        rows.lines().count() as u64,
        s["departures"].as_u64().unwrap() + 1
    );
}

#[test]
fn errors_are_json_on_stderr() {
    let dir = tempfile::tempdir().unwrap();
    let missing = path(dir.path(), "missing.jsonl");
    let out = run(&[
        "--out",
        &path(dir.path(), "o"),
        "timetable",
        "--trace",
        &missing,
        "--stations",
        "3",
    ]);
    assert_eq!(out.status.code(), Some(1));
    let v: Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(v["status"], "error");
    assert_eq!(v["kind"], "runtime");
    assert!(v["error"].as_str().unwrap().contains("missing.jsonl"));

    let out = run(&["no-such-command"]);
    assert_eq!(out.status.code(), Some(1));
    let v: Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(v["kind"], "usage");

    let bad = path(dir.path(), "bad.json");
    fs::write(&bad, "{not json").unwrap();
    let out = run(&[
        "--config",
        &bad,
        "--out",
        &path(dir.path(), "o"),
        "simulate",
    ]);
    assert_eq!(out.status.code(), Some(1));

    assert!(run(&["--help"]).status.success());
    assert!(run(&["--version"]).status.success());
}
