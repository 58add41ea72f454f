use std::path::Path;
use std::process::{Command, Output};

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_crowdlabel"))
        .args(args)
        .env("ANNO_DATA_DIR", dir)
        .output()
        .unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn missing_inputs_name_the_stage() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(dir.path(), &["metrics", "report"]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("simulate world"), "{}", stderr(&o));

    assert!(run(dir.path(), &["simulate", "world", "--images", "60"]).status.success());
    let o = run(dir.path(), &["grids", "build"]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("pool.jsonl not found; run `ingest` first"), "{}", stderr(&o));

    assert!(run(dir.path(), &["ingest"]).status.success());
    let o = run(dir.path(), &["metrics", "report"]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("classify aggregate"), "{}", stderr(&o));
    let o = run(dir.path(), &["qc", "contains"]);
    assert!(stderr(&o).contains("grids build"), "{}", stderr(&o));
}

#[test]
fn config_file_and_flags() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    std::fs::write(&cfg, r#"{"seed": 5, "annotators": 3}"#).unwrap();
    let cfg = cfg.to_str().unwrap();
    assert!(run(dir.path(), &["--config", cfg, "simulate", "world", "--images", "60"]).status.success());
    let m: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("manifests/simulate_world.json")).unwrap()).unwrap();
    assert_eq!(m["seed"], 5);
    assert_eq!(m["config"]["annotators"], 3);
    assert_eq!(m["parameters"]["spec"]["images"], 60);
    assert!(m["outputs"]["dataset.jsonl"].as_str().unwrap().len() == 64);

    assert!(run(dir.path(), &["--config", cfg, "--seed", "6", "ingest"]).status.success());
    let m: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("manifests/ingest.json")).unwrap()).unwrap();
    assert_eq!(m["seed"], 6);
    assert!(m["inputs"]["classes.tsv"].is_string());

    let o = run(dir.path(), &["--grid-size", "3", "grids", "build"]);
    assert!(!o.status.success());
}

#[test]
fn unknown_confusion_source_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    assert!(run(dir.path(), &["simulate", "world", "--images", "60"]).status.success());
    let o = run(dir.path(), &["analyze", "confusion", "--source", "oracle"]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("unknown source"), "{}", stderr(&o));
}
