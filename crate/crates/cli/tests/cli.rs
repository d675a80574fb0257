use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

const BIN: &str = env!("CARGO_BIN_EXE_fmcvrp");

/// Small desk-derived run: two sizes, a handful of steps.
const TINY: &str = r#"{
  "data": { "sizes": [10, 11], "per_size": 24 },
  "eval": { "sizes": [10, 11], "count": 6 },
  "decode": { "samples": 4 },
  "train": {
    "checkpoint_every": 0,
    "phases": [
      { "name": "I", "min_size": 10, "stages": [11], "trunc": 20, "scope": "encoder", "batch_size": 4,
        "schedule": { "kind": "constant", "lr": 0.001 }, "rotation": false, "steps": 4 },
      { "name": "II-A", "min_size": 10, "stages": [10, 11], "trunc": null, "scope": "encoder_decoder", "batch_size": 4,
        "schedule": { "kind": "constant", "lr": 0.001 }, "rotation": false, "steps": 6 }
    ]
  }
}"#;

fn fmcvrp(args: &[&str], dir: &Path) -> Output {
    Command::new(BIN)
        .args(args)
        .current_dir(dir)
        .env("RUST_LOG", "warn")
        .env_remove("FMCVRP_SEED")
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) -> String {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout: {}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn error_json(out: &Output) -> Value {
    let err = String::from_utf8_lossy(&out.stderr);
    let line = err.lines().rev().find(|l| l.starts_with('{')).expect("json error line");
    serde_json::from_str(line).unwrap()
}

fn tiny_setup(dir: &Path) {
    std::fs::write(dir.join("tiny.json"), TINY).unwrap();
}

#[test]
fn config_show_layers_env_and_flags() {
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(BIN)
        .args(["config", "show", "--seed", "77"])
        .env("FMCVRP_DATA__PER_SIZE", "123")
        .current_dir(dir.path())
        .output()
        .unwrap();
    let cfg: Value = serde_json::from_str(&ok(&out)).unwrap();
    assert_eq!(cfg["profile"], "desk");
    assert_eq!(cfg["seed"], 77);
    assert_eq!(cfg["data"]["per_size"], 123);
    assert_eq!(cfg["model"]["d_model"], 64);

    let paper: Value = serde_json::from_str(&ok(&fmcvrp(&["config", "show", "--profile", "paper"], dir.path()))).unwrap();
    assert_eq!(paper["model"]["n_layers"], 12);
}

#[test]
fn invalid_configuration_exits_2_with_json_error() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("bad.json"), r#"{ "data": { "per_size": 0 } }"#).unwrap();
    let out = fmcvrp(&["--config", "bad.json", "--error-json", "config", "show"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    let e = error_json(&out);
    assert_eq!(e["exit_code"], 2);
    assert!(e["message"].as_str().unwrap().contains("per_size"), "{e}");

    std::fs::write(dir.path().join("unknown.json"), r#"{ "data": { "bogus": 1 } }"#).unwrap();
    let out = fmcvrp(&["--config", "unknown.json", "config", "show"], dir.path());
    assert_eq!(out.status.code(), Some(2));

    let out = Command::new(BIN)
        .args(["config", "show"])
        .env("FMCVRP_NOPE", "1")
        .current_dir(dir.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn missing_inputs_exit_4() {
    let dir = tempfile::tempdir().unwrap();
    let out = fmcvrp(&["--out", "run", "--error-json", "data", "gen"], dir.path());
    assert_eq!(out.status.code(), Some(4));
    assert_eq!(error_json(&out)["exit_code"], 4);
    let out = fmcvrp(&["--config", "absent.json", "config", "show"], dir.path());
    assert_eq!(out.status.code(), Some(4));
}

#[test]
fn data_gen_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    tiny_setup(dir.path());
    let mut digests = Vec::new();
    for run in ["a", "b"] {
        ok(&fmcvrp(&["--config", "tiny.json", "--out", run, "graph", "build"], dir.path()));
        let text = ok(&fmcvrp(&["--config", "tiny.json", "--out", run, "data", "gen"], dir.path()));
        digests.push(text);
        let a = std::fs::read(dir.path().join(run).join("data/train.jsonl")).unwrap();
        assert!(!a.is_empty());
    }
    assert_eq!(digests[0], digests[1]);
    // another seed gives another dataset
    ok(&fmcvrp(&["--config", "tiny.json", "--seed", "5", "--out", "c", "graph", "build"], dir.path()));
    let other = ok(&fmcvrp(&["--config", "tiny.json", "--seed", "5", "--out", "c", "data", "gen"], dir.path()));
    assert_ne!(digests[0], other);
}

#[test]
fn run_directory_refuses_a_different_config() {
    let dir = tempfile::tempdir().unwrap();
    tiny_setup(dir.path());
    ok(&fmcvrp(&["--config", "tiny.json", "--out", "r", "graph", "build"], dir.path()));
    let out = fmcvrp(&["--config", "tiny.json", "--seed", "9", "--out", "r", "data", "gen"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    // worker count is not part of the run identity
    ok(&fmcvrp(&["--config", "tiny.json", "--workers", "2", "--out", "r", "data", "gen"], dir.path()));
}

#[test]
fn tiny_pipeline_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    tiny_setup(dir.path());
    let base = ["--config", "tiny.json", "--out", "run"];
    let step = |extra: &[&str]| {
        let args: Vec<&str> = base.iter().chain(extra).copied().collect();
        ok(&fmcvrp(&args, dir.path()))
    };
    step(&["graph", "build"]);
    step(&["data", "gen"]);
    step(&["teacher", "solve", "--construction-only", "--name", "cw"]);
    let trained = step(&["train", "run"]);
    assert!(trained.contains("trained 10 steps"), "{trained}");
    let decoded = step(&["decode", "run"]);
    assert!(decoded.contains("greedy: 6 instances"), "{decoded}");
    assert!(decoded.contains("nucleus-s4: 6 instances"), "{decoded}");
    step(&["eval", "report"]);

    let root = dir.path().join("run");
    let report = std::fs::read_to_string(root.join("eval/report.csv")).unwrap();
    let header = report.lines().next().unwrap();
    assert_eq!(header, fmcvrp_core::eval::REPORT_HEADER.join(","));
    assert!(report.contains("teacher-cw"));
    assert!(report.lines().any(|l| l.contains(",model,greedy,1,")), "{report}");
    assert!(root.join("eval/example.svg").exists());

    let log = std::fs::read_to_string(root.join("train/trainlog.csv")).unwrap();
    assert_eq!(log.lines().next().unwrap(), "step,phase,lr,problem_loss,solution_loss,grad_norm,wall_time_s");
    assert_eq!(log.lines().count(), 11);

    let manifest: Value = serde_json::from_str(&std::fs::read_to_string(root.join("manifest.json")).unwrap()).unwrap();
    for s in ["graph build", "data gen", "train run", "eval report"] {
        assert!(manifest["steps"].get(s).is_some(), "manifest lacks {s}");
    }
}

#[test]
fn diverging_training_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = TINY.replace(r#""lr": 0.001 }, "rotation": false, "steps": 6"#, r#""lr": 1e38 }, "rotation": false, "steps": 6"#);
    std::fs::write(dir.path().join("hot.json"), cfg).unwrap();
    let base = ["--config", "hot.json", "--out", "run"];
    for cmd in [&["graph", "build"][..], &["data", "gen"][..]] {
        let args: Vec<&str> = base.iter().chain(cmd).copied().collect();
        ok(&fmcvrp(&args, dir.path()));
    }
    let out = fmcvrp(&["--config", "hot.json", "--out", "run", "--error-json", "train", "run"], dir.path());
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(error_json(&out)["error"], "divergence");
}

#[test]
fn check_commands_pass_on_random_models() {
    let dir = tempfile::tempdir().unwrap();
    let out = ok(&fmcvrp(&["check", "grad", "--points", "5", "--coords", "20"], dir.path()));
    let summary: Value = serde_json::from_str(out.lines().next().unwrap()).unwrap();
    assert!(summary["max_rel_error"].as_f64().unwrap() < 1e-4);
    assert!(out.contains("max relative error"));
    let out = ok(&fmcvrp(&["check", "invariants", "--count", "60"], dir.path()));
    let s: Value = serde_json::from_str(out.lines().next().unwrap()).unwrap();
    assert_eq!(s["infeasible"], 0);
}
