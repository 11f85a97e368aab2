use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

const TINY: &str = r#"
name = "tiny"
mode = "simulate"
n_runs = 3
seed = 5
workers = 1

[simulation]
n_train = 300
n_test = 200

[[simulation.blocks]]
n_features = 3
n_important = 2
beta_imp = 3.0
beta_int = 0.0

[[simulation.blocks]]
n_features = 3
n_important = 0
beta_imp = 0.0
beta_int = 0.0

[training]
epochs = 15

[vargrad]
n_draws = 4

[evaluation]
performance_threshold = -1000.0
"#;

fn blockrank(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_blockrank"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn setup(config: &str) -> (TempDir, PathBuf) {
    let dir = TempDir::new().unwrap();
    let path = dir.path().join("exp.toml");
    fs::write(&path, config).unwrap();
    (dir, path)
}

fn ok(out: &Output) {
    assert!(out.status.success(), "exit {:?}: {}", out.status.code(), String::from_utf8_lossy(&out.stderr));
}

#[test]
fn full_pipeline_writes_report() {
    let (dir, _) = setup(TINY);
    ok(&blockrank(dir.path(), &["run", "--config", "exp.toml", "--out", "a"]));
    let root = dir.path().join("a/tiny");
    for f in ["config.toml", "dataset/train.csv", "dataset/sidecar.json", "models/run_002.model", "models/metrics.json",
        "scores/run_000.json", "scores/knock-in.csv", "scores/composite-max.csv", "scores/vargrad/run_001.csv",
        "summary.json", "report.json", "scores_long.csv"]
    {
        assert!(root.join(f).exists(), "{f} missing");
    }

    let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(root.join("summary.json")).unwrap()).unwrap();
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(root.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["summary"], summary);
    let strategies = summary["strategies"].as_array().unwrap();
    assert_eq!(strategies.len(), 5);
    for s in strategies {
        assert!(s["tie_groups"].as_array().is_some_and(|g| !g.is_empty()));
        assert!(s["spearman"]["mean"].is_number());
    }

    // Every artifact carries the hash of the configuration that produced it.
    let hash = summary["config_hash"].as_str().unwrap().to_string();
    for f in ["config.toml", "dataset/train.csv", "dataset/sidecar.json", "models/run_000.model", "models/metrics.json",
        "scores/run_000.json", "scores/knock-out.csv", "scores/vargrad/run_000.csv", "report.json", "scores_long.csv"]
    {
        assert!(fs::read_to_string(root.join(f)).unwrap().contains(&hash), "{f} lacks the config hash");
    }
    let long = fs::read_to_string(root.join("scores_long.csv")).unwrap();
    assert_eq!(long.lines().count(), 1 + 3 * 5 * 2);

    // Same config and seed: byte-identical summary.
    ok(&blockrank(dir.path(), &["run", "--config", "exp.toml", "--out", "b"]));
    assert_eq!(
        fs::read(root.join("summary.json")).unwrap(),
        fs::read(dir.path().join("b/tiny/summary.json")).unwrap()
    );
    ok(&blockrank(dir.path(), &["run", "--config", "exp.toml", "--out", "c", "--seed", "6"]));
    assert_ne!(
        fs::read(root.join("summary.json")).unwrap(),
        fs::read(dir.path().join("c/tiny/summary.json")).unwrap()
    );
}

#[test]
fn rank_with_subset_of_strategies() {
    let (dir, _) = setup(TINY);
    let args = ["--config", "exp.toml", "--runs", "2"];
    ok(&blockrank(dir.path(), &[&["simulate"], &args[..]].concat()));
    ok(&blockrank(dir.path(), &[&["train"], &args[..]].concat()));
    ok(&blockrank(dir.path(), &[&["rank", "--strategies", "knock-in,knock-out"], &args[..]].concat()));
    let scores = dir.path().join("out/tiny/scores");
    assert!(scores.join("knock-in.csv").exists());
    assert!(scores.join("knock-out.csv").exists());
    for absent in ["composite-sum.csv", "composite-mean.csv", "composite-max.csv", "vargrad"] {
        assert!(!scores.join(absent).exists(), "{absent} should not exist");
    }
    let out = blockrank(dir.path(), &[&["evaluate", "--strategies", "knock-in,knock-out"], &args[..]].concat());
    ok(&out);
    let summary = fs::read_to_string(dir.path().join("out/tiny/summary.json")).unwrap();
    assert!(!summary.contains("composite"));
}

#[test]
fn exit_codes_by_error_class() {
    let (dir, _) = setup(TINY);
    let code = |args: &[&str]| blockrank(dir.path(), args).status.code();

    // Stage dependencies.
    assert_eq!(code(&["evaluate", "--config", "exp.toml"]), Some(4));
    assert_eq!(code(&["train", "--config", "exp.toml"]), Some(4));
    assert_eq!(code(&["report", "--config", "exp.toml"]), Some(4));

    // Configuration problems.
    assert_eq!(code(&["run"]), Some(2));
    assert_eq!(code(&["run", "--config", "missing.toml"]), Some(2));
    fs::write(dir.path().join("bad.toml"), "name = \"x\"\nmode = \"simulate\"\n").unwrap();
    assert_eq!(code(&["run", "--config", "bad.toml"]), Some(2));
    fs::write(dir.path().join("broken.toml"), "name = ").unwrap();
    assert_eq!(code(&["run", "--config", "broken.toml"]), Some(2));
    assert_eq!(code(&["run", "--config", "exp.toml", "--strategies", "bogus"]), Some(2));

    // Data problems.
    fs::write(dir.path().join("d.csv"), "a,b,y\n1,2,3\n2,x,4\n3,4,5\n4,5,6\n5,6,7\n").unwrap();
    let ingest = r#"
name = "ing"
mode = "ingest"
[data]
csv = "d.csv"
target = "y"
blocks = [{ name = "B1", columns = ["a", "b"] }]
"#;
    fs::write(dir.path().join("ing.toml"), ingest).unwrap();
    let out = blockrank(dir.path(), &["train", "--config", "ing.toml"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("row 2"));
}

#[test]
fn ingest_pipeline_with_categorical_block() {
    let mut csv = String::from("id,size,shape,y\n");
    for i in 0..120 {
        let shape = ["round", "flat", "tall", "wide"][i % 4];
        let size = (i % 17) as f64 / 4.0;
        let y = 2.0 * size + if shape == "tall" { 3.0 } else { 0.0 };
        csv.push_str(&format!("{i},{size},{shape},{y}\n"));
    }
    let config = r#"
name = "ing"
mode = "ingest"
n_runs = 2
workers = 1
strategies = ["knock-in", "composite-mean"]
[data]
csv = "data.csv"
target = "y"
categorical = ["shape"]
ignore = ["id"]
blocks = [{ name = "size", columns = ["size"] }, { name = "shape", columns = ["shape"] }]
[training]
epochs = 20
[evaluation]
performance_threshold = -1000.0
"#;
    let (dir, _) = setup(config);
    fs::write(dir.path().join("data.csv"), csv).unwrap();
    ok(&blockrank(dir.path(), &["run", "--config", "exp.toml"]));
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("out/ing/summary.json")).unwrap()).unwrap();
    assert_eq!(summary["blocks"], serde_json::json!(["size", "shape"]));
    assert!(summary["strategies"][0]["spearman"].is_null());
    assert!(!dir.path().join("out/ing/dataset").exists());
}
