use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const TINY: &str = r#"
seeds = [0]
horizons = [10, 40]
sequence_length = 8
stride = 4

[plant]
sensors = 3
duration = 4000

[qrnn.stage1]
window = 8

[qrnn.stage1.net]
encoder = [8, 4]
decoder = [4, 8]

[qrnn.stage1.fit]
epochs = 2
max_samples = 300

[qrnn.stage2.net]
encoder = [4]
decoder = [4]

[qrnn.stage2.fit]
epochs = 2
max_samples = 300

[transformer]
num_layers = 1
model_dim = 8
ffn_dim = 8
sequence_length = 8

[transformer_training]
epochs = 2

[latency]
sensors = 4
warmup = 1

[latency.transformer]
num_layers = 1
model_dim = 8
ffn_dim = 8
sequence_length = 8
"#;

fn tqrnn(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tqrnn"))
        .current_dir(dir)
        .env_remove("TQRNN_DATA_DIR")
        .env_remove("TQRNN_MODELS_DIR")
        .env_remove("TQRNN_RESULTS_DIR")
        .args(["-q", "--config", "tiny.toml"])
        .args(args)
        .output()
        .unwrap()
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = tqrnn(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn trained() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("tiny.toml"), TINY).unwrap();
    ok(dir.path(), &["generate"]);
    ok(dir.path(), &["train-qrnn"]);
    ok(dir.path(), &["train-transformer"]);
    dir
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

#[test]
fn full_workflow_writes_every_artifact() {
    let dir = trained();
    let d = dir.path();
    ok(d, &["evaluate"]);
    ok(d, &["bench"]);
    for f in [
        "data/trace-seed0.txt",
        "models/qrnn-seed0.tqa",
        "models/transformer-all-h40-seed0.tqa",
        "models/transformer-transformer-h10-seed0.tqa",
        "results/ablation.txt",
        "results/ablation.jsonl",
        "results/latency.txt",
        "results/qrnn-history-seed0.jsonl",
        "results/evaluate-summary.json",
    ] {
        assert!(d.join(f).is_file(), "missing {f}");
    }
    let table = fs::read_to_string(d.join("results/ablation.txt")).unwrap();
    assert_eq!(table.lines().count(), 1 + 4 * 2);
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(d.join("results/evaluate-summary.json")).unwrap()).unwrap();
    assert_eq!(summary["rows"].as_array().unwrap().len(), 8);
    assert!(summary["config_digest"].is_string());
}

#[test]
fn repeated_runs_are_byte_identical() {
    let dir = trained();
    let d = dir.path();
    let p1 = ok(d, &["predict", "--output", "a.jsonl"]);
    let p2 = ok(d, &["predict", "--output", "b.jsonl"]);
    assert_eq!(fs::read(d.join("a.jsonl")).unwrap(), fs::read(d.join("b.jsonl")).unwrap());
    assert_eq!(p1.replace("a.jsonl", "b.jsonl"), p2);
    ok(d, &["evaluate"]);
    let t1 = fs::read(d.join("results/ablation.txt")).unwrap();
    ok(d, &["evaluate"]);
    assert_eq!(t1, fs::read(d.join("results/ablation.txt")).unwrap());

    let models = fs::read(d.join("models/transformer-all-h40-seed0.tqa")).unwrap();
    ok(d, &["train-transformer"]);
    assert_eq!(models, fs::read(d.join("models/transformer-all-h40-seed0.tqa")).unwrap());
}

#[test]
fn corrupted_archive_names_the_section() {
    let dir = trained();
    let d = dir.path();
    let path = d.join("models/qrnn-seed0.tqa");
    let text = fs::read_to_string(&path).unwrap();
    let mut lines: Vec<String> = text.lines().map(String::from).collect();
    let at = lines.iter().position(|l| l.starts_with("section sensor.2.stage1.3 ")).unwrap() + 1;
    lines[at].push_str(" 9");
    fs::write(&path, lines.join("\n") + "\n").unwrap();
    let out = tqrnn(d, &["evaluate"]);
    assert_eq!(out.status.code(), Some(2));
    let err = stderr(&out);
    assert!(err.contains("E_ARCHIVE") && err.contains("sensor.2.stage1.3"), "{err}");
}

#[test]
fn newer_archive_version_is_refused() {
    let dir = trained();
    let d = dir.path();
    let path = d.join("models/transformer-all-h40-seed0.tqa");
    let text = fs::read_to_string(&path).unwrap().replacen("TQRNN-ARCHIVE 1", "TQRNN-ARCHIVE 7", 1);
    fs::write(&path, text).unwrap();
    let out = tqrnn(d, &["predict"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("E_VERSION"), "{}", stderr(&out));
}

#[test]
fn changed_config_warns_but_loads() {
    let dir = trained();
    let out = ok(dir.path(), &["--set", "plant.faults.severity=[1.6, 2.5]", "predict"]);
    let v: serde_json::Value = serde_json::from_str(&out).unwrap();
    assert!(!v["warnings"].as_array().unwrap().is_empty(), "{out}");
}

#[test]
fn missing_models_are_reported() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("tiny.toml"), TINY).unwrap();
    ok(d, &["generate"]);
    let out = tqrnn(d, &["evaluate"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("E_MISSING"), "{}", stderr(&out));
}

#[test]
fn bad_configuration_names_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("tiny.toml"), TINY).unwrap();
    let out = tqrnn(d, &["--set", "transformer.model_dim=7", "show-config"]);
    assert_eq!(out.status.code(), Some(2));
    let err = stderr(&out);
    assert!(err.contains("E_CONFIG") && err.contains("transformer.model_dim"), "{err}");

    fs::write(d.join("tiny.toml"), "[plant]\nsensors = \"many\"\n").unwrap();
    let err = stderr(&tqrnn(d, &["show-config"]));
    assert!(err.contains("E_CONFIG") && err.contains("plant.sensors"), "{err}");

    fs::write(d.join("tiny.toml"), "seeds = [0,\n").unwrap();
    assert!(stderr(&tqrnn(d, &["show-config"])).contains("E_PARSE"));
}

#[test]
fn environment_moves_the_directories() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("tiny.toml"), TINY).unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_tqrnn"))
        .current_dir(d)
        .env("TQRNN_DATA_DIR", "elsewhere")
        .args(["-q", "--config", "tiny.toml", "generate"])
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(d.join("elsewhere/trace-seed0.txt").is_file());
}
