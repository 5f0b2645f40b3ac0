use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};

fn gnas(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gnas")).args(args).output().expect("spawn gnas")
}

fn ok(args: &[&str]) -> String {
    let out = gnas(args);
    assert!(
        out.status.success(),
        "`gnas {}` failed: {}",
        args.join(" "),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn fails(args: &[&str]) -> String {
    let out = gnas(args);
    assert!(!out.status.success(), "`gnas {}` unexpectedly succeeded", args.join(" "));
    String::from_utf8(out.stderr).unwrap()
}

fn s(p: &Path) -> String {
    p.to_string_lossy().into_owned()
}

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

/// Small synthetic dataset plus a fast config pointing at it.
fn setup(dir: &Path, extra: Value) -> PathBuf {
    ok(&["synth-data", "--graphs", "60", "--seed", "1", "--out", &s(&dir.join("data"))]);
    let mut cfg = json!({
        "schema": "gnas-config/1",
        "dataset": {"source": "file", "graphs": "data/graphs.jsonl", "splits": "data/splits.json", "task": {"type": "binary"}},
        "search": {"num_blocks": 2, "hidden": 8, "epochs": 1, "batch_size": 16},
        "train": {"hidden_size": 8, "epochs": 2, "batch_size": 16}
    });
    if let (Value::Object(base), Value::Object(more)) = (&mut cfg, extra) {
        base.extend(more);
    }
    let path = dir.join("config.json");
    std::fs::write(&path, cfg.to_string()).unwrap();
    path
}

#[test]
fn synth_data_writes_requested_split_sizes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("d");
    ok(&["synth-data", "--graphs", "500", "--out", &s(&out)]);
    let lines = std::fs::read_to_string(out.join("graphs.jsonl")).unwrap();
    assert_eq!(lines.lines().count(), 500);
    let splits = read_json(&out.join("splits.json"));
    let len = |k: &str| splits[k].as_array().unwrap().len();
    assert_eq!((len("train"), len("valid"), len("test")), (400, 50, 50));
}

#[test]
fn fixed_aggregation_and_block_override() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = setup(dir.path(), json!({}));
    let out = dir.path().join("s");
    ok(&["search", "--config", &s(&cfg), "--fixed-agg", "EXPC", "--blocks", "14", "--out", &s(&out)]);
    let arch = read_json(&out.join("arch.json"));
    let blocks = arch["blocks"].as_array().unwrap();
    assert_eq!(blocks.len(), 14);
    assert!(blocks.iter().all(|b| b["agg"] == "EXPC"), "{arch}");
}

#[test]
fn train_then_eval_reproduces_valid_metric() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = setup(dir.path(), json!({}));
    let (sdir, tdir, edir) = (dir.path().join("s"), dir.path().join("t"), dir.path().join("e"));
    ok(&["search", "--config", &s(&cfg), "--out", &s(&sdir)]);
    ok(&["derive", "--model", &s(&sdir.join("model.manifest.json")), "--out", &s(&sdir)]);
    ok(&["train", "--config", &s(&cfg), "--arch", &s(&sdir.join("arch.json")), "--out", &s(&tdir)]);
    ok(&["eval", "--config", &s(&cfg), "--model", &s(&tdir.join("model.manifest.json")), "--out", &s(&edir)]);
    let split_value = |r: &Value, split: &str| {
        r["reports"]
            .as_array()
            .unwrap()
            .iter()
            .find(|e| e["split"] == split)
            .map(|e| e["value"].as_f64().unwrap())
            .unwrap()
    };
    let (trained, evaluated) = (read_json(&tdir.join("report.json")), read_json(&edir.join("report.json")));
    let (a, b) = (split_value(&trained, "valid"), split_value(&evaluated, "valid"));
    assert!((a - b).abs() < 1e-12, "train {a} vs eval {b}");
}

#[test]
fn missing_dataset_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = setup(dir.path(), json!({}));
    std::fs::remove_file(dir.path().join("data/graphs.jsonl")).unwrap();
    let err = fails(&["search", "--config", &s(&cfg), "--out", &s(&dir.path().join("o"))]);
    assert!(err.contains("graphs.jsonl"), "{err}");
}

#[test]
fn auc_on_multiclass_data_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    std::fs::create_dir_all(&data).unwrap();
    let mut lines = String::new();
    for i in 0..9 {
        let rec = json!({"num_nodes": 3, "edges": [[0, 1], [1, 0], [1, 2], [2, 1]], "label": i % 3});
        lines.push_str(&format!("{rec}\n"));
    }
    std::fs::write(data.join("graphs.jsonl"), lines).unwrap();
    std::fs::write(data.join("splits.json"), json!({"train": [0, 1, 2, 3, 4], "valid": [5, 6], "test": [7, 8]}).to_string())
        .unwrap();
    let cfg = dir.path().join("config.json");
    std::fs::write(
        &cfg,
        json!({
            "schema": "gnas-config/1",
            "dataset": {"source": "file", "graphs": "data/graphs.jsonl", "splits": "data/splits.json",
                        "task": {"type": "multi-class", "classes": 3}},
            "search": {"num_blocks": 1, "hidden": 4, "epochs": 1, "metric": "auc"}
        })
        .to_string(),
    )
    .unwrap();
    let err = fails(&["search", "--config", &s(&cfg), "--out", &s(&dir.path().join("o"))]);
    assert!(err.to_lowercase().contains("auc"), "{err}");

    let arch = dir.path().join("arch.json");
    std::fs::write(
        &arch,
        r#"{"num_blocks":1,"blocks":[{"select":[1],"fusion":"SUM","agg":"GIN"}],"readout":"GLOBAL_MEAN"}"#,
    )
    .unwrap();
    let cfg_text = std::fs::read_to_string(&cfg).unwrap().replace(r#""metric":"auc""#, r#""metric":"accuracy""#);
    std::fs::write(&cfg, cfg_text).unwrap();
    let t = dir.path().join("t");
    ok(&["train", "--config", &s(&cfg), "--arch", &s(&arch), "--out", &s(&t)]);
    let model = s(&t.join("model.manifest.json"));
    let err = fails(&["eval", "--config", &s(&cfg), "--model", &model, "--metric", "auc", "--out", &s(&dir.path().join("e"))]);
    assert!(err.to_lowercase().contains("auc") && err.contains("multi-class"), "{err}");
}

#[test]
fn gamma_is_out_of_scope() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = setup(dir.path(), json!({"train": {"gamma": 0.5}}));
    let err = fails(&["search", "--config", &s(&cfg), "--out", &s(&dir.path().join("o"))]);
    assert!(err.contains("gamma"), "{err}");
}

#[test]
fn strict_grid_rejects_off_grid_values() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = setup(dir.path(), json!({"grid": "molhiv"}));
    let err = fails(&["search", "--config", &s(&cfg), "--strict-grid", "--out", &s(&dir.path().join("o"))]);
    assert!(err.contains("molhiv grid"), "{err}");
    ok(&["search", "--config", &s(&cfg), "--out", &s(&dir.path().join("o"))]);
}

#[test]
fn gradcheck_passes_and_fault_injection_fails() {
    let stdout = ok(&["gradcheck"]);
    assert!(stdout.contains("0 failed"), "{stdout}");
    let out = gnas(&["gradcheck", "--inject-fault"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn invalid_arch_json_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = setup(dir.path(), json!({}));
    let arch = dir.path().join("arch.json");
    std::fs::write(&arch, r#"{"blocks": [{"agg": "NOPE"}]}"#).unwrap();
    fails(&["train", "--config", &s(&cfg), "--arch", &s(&arch), "--out", &s(&dir.path().join("o"))]);
}

#[test]
fn bad_arguments_exit_with_usage_code() {
    assert_eq!(gnas(&["search", "--no-such-flag"]).status.code(), Some(2));
    assert_eq!(gnas(&["--help"]).status.code(), Some(0));
}
