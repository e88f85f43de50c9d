use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn lanemap(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lanemap")).args(args).output().expect("spawn lanemap")
}

fn ok(args: &[&str]) -> String {
    let out = lanemap(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn write_config(dir: &Path) -> std::path::PathBuf {
    let cfg = dir.join("config.json");
    fs::write(&cfg, r#"{"scenario": {"length": 50.0, "seed": 3}}"#).unwrap();
    cfg
}

#[test]
fn simulate_run_and_evaluate() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let sim = dir.path().join("sim");
    ok(&["simulate", "--config", p(&cfg), "--out", p(&sim)]);
    let frames = sim.join("frames.jsonl");
    let truth = sim.join("truth.json");
    assert!(frames.exists() && truth.exists());

    let out = dir.path().join("out");
    ok(&["run", "--config", p(&cfg), "--frames", p(&frames), "--out", p(&out)]);
    for name in ["map.json", "trajectory.json", "log.jsonl"] {
        assert!(out.join(name).exists(), "missing {name}");
    }

    let map: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("map.json")).unwrap()).unwrap();
    assert_eq!(map["format"], "lanemap-map");
    assert_eq!(map["version"], 1);
    assert_eq!(map["tau"], 0.5);
    assert_eq!(map["config_hash"].as_str().unwrap().len(), 64);
    let landmarks = map["landmarks"].as_array().unwrap();
    assert_eq!(landmarks.len(), 4);
    for lm in landmarks {
        assert!(lm["control_points"].as_array().unwrap().len() >= 4);
        assert!(lm["category"].is_string());
    }

    let table = ok(&["eval-map", "--map", p(&out.join("map.json")), "--truth", p(&truth), "--config", p(&cfg)]);
    assert!(table.contains("F1"));

    let rpe = dir.path().join("rpe.json");
    ok(&["eval-pose", "--frames", p(&frames), "--truth", p(&truth), "--out", p(&rpe), "--config", p(&cfg)]);
    assert!(rpe.exists());

    let csv = dir.path().join("map.csv");
    ok(&["export", "--map", p(&out.join("map.json")), "--format", "csv", "--out", p(&csv)]);
    assert!(fs::read_to_string(&csv).unwrap().lines().count() > 4);

    let svg = dir.path().join("map.svg");
    ok(&["plot", "--map", p(&out.join("map.json")), "--truth", p(&truth), "--out", p(&svg)]);
    assert!(fs::read_to_string(&svg).unwrap().starts_with("<svg"));
}

#[test]
fn runs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let sim = dir.path().join("sim");
    ok(&["simulate", "--config", p(&cfg), "--out", p(&sim)]);
    let frames = sim.join("frames.jsonl");
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    ok(&["run", "--config", p(&cfg), "--frames", p(&frames), "--out", p(&a)]);
    ok(&["run", "--config", p(&cfg), "--frames", p(&frames), "--out", p(&b)]);
    assert_eq!(fs::read(a.join("map.json")).unwrap(), fs::read(b.join("map.json")).unwrap());
}

#[test]
fn empty_stream_gives_empty_map() {
    let dir = tempfile::tempdir().unwrap();
    let frames = dir.path().join("frames.jsonl");
    fs::write(&frames, "{\"format\":\"lanemap-frames\",\"version\":1,\"label\":\"empty\"}\n").unwrap();
    let out = dir.path().join("out");
    ok(&["run", "--frames", p(&frames), "--out", p(&out)]);
    let map: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("map.json")).unwrap()).unwrap();
    assert_eq!(map["frame_count"], 0);
    assert!(map["landmarks"].as_array().unwrap().is_empty());
}

#[test]
fn missing_input_fails_with_code() {
    let dir = tempfile::tempdir().unwrap();
    let out = lanemap(&["run", "--frames", p(&dir.path().join("nope.jsonl")), "--out", p(dir.path())]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("E_IO"));
}

#[test]
fn unknown_config_key_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.json");
    fs::write(&cfg, r#"{"not_a_field": 1}"#).unwrap();
    let out = lanemap(&["simulate", "--config", p(&cfg), "--out", p(dir.path())]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("E_CONFIG"));
}
