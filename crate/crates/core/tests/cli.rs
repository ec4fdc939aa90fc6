use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("configs")
}

fn nlexit(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nlexit")).args(args).output().unwrap()
}

fn run_config(experiment: &str, text: &str, out: &Path) -> Output {
    let cfg = out.join("config.json");
    std::fs::create_dir_all(out).unwrap();
    std::fs::write(&cfg, text).unwrap();
    nlexit(&[experiment, "--config", cfg.to_str().unwrap(), "--out", out.join("run").to_str().unwrap()])
}

fn report(out: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(out.join("run/report.json")).unwrap()).unwrap()
}

#[test]
fn example_configs_parse() {
    for entry in std::fs::read_dir(configs()).unwrap() {
        let path = entry.unwrap().path();
        let text = std::fs::read_to_string(&path).unwrap();
        if let Err(e) = nlexit::cli::config::parse_config(&text) {
            panic!("{}: {e}", path.display());
        }
    }
}

#[test]
fn pointmass_counterexample_passes_and_embeds_config() {
    let dir = tempfile::tempdir().unwrap();
    let text = std::fs::read_to_string(configs().join("counterexample_pointmass.json")).unwrap();
    let out = run_config("counterexample", &text, dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let r = report(dir.path());
    assert_eq!(r["verdict"], "pass");
    assert_eq!(r["schema_version"], 1);
    assert_eq!(r["config"], serde_json::from_str::<Value>(&text).unwrap());
    assert_eq!(r["code_version"]["source_hash"].as_str().unwrap().len(), 16);
    let rows = r["metrics"]["result"]["rows"].as_array().unwrap();
    for row in rows {
        let x = row["x"].as_f64().unwrap();
        let want = if x >= 0.0 { 0.0 } else { 1.0 };
        assert_eq!(row["open_clamped"].as_f64().unwrap(), want, "x = {x}");
    }
    assert!(dir.path().join("run/summary.md").exists());
}

#[test]
fn zero_steps_is_a_config_error_naming_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let text = std::fs::read_to_string(configs().join("simulate.json"))
        .unwrap()
        .replace("\"steps\": 200", "\"steps\": 0");
    let out = run_config("simulate", &text, dir.path());
    assert_eq!(out.status.code(), Some(2));
    let err: Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["error"], "config");
    assert_eq!(err["pointer"], "/grid/steps");
    assert!(!dir.path().join("run/report.json").exists());
}

#[test]
fn unknown_keys_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let text = std::fs::read_to_string(configs().join("moment_bound.json"))
        .unwrap()
        .replace("\"lambda\": 1.0", "\"lambda\": 1.0, \"lamda\": 1.0");
    let out = run_config("moment-bound", &text, dir.path());
    assert_eq!(out.status.code(), Some(2));
    let err: Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["pointer"], "/lamda");
}

#[test]
fn experiment_must_match_the_config() {
    let dir = tempfile::tempdir().unwrap();
    let text = std::fs::read_to_string(configs().join("simulate.json")).unwrap();
    let out = run_config("exit-stats", &text, dir.path());
    assert_eq!(out.status.code(), Some(2));
    let err: Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["pointer"], "/experiment");
}

#[test]
fn failing_verdict_exits_nonzero_with_failure_list() {
    let dir = tempfile::tempdir().unwrap();
    // a bound that cannot hold: E[tau] = 1 for unit Brownian motion
    let text = std::fs::read_to_string(configs().join("moment_bound.json"))
        .unwrap()
        .replace("\"value\": 1.0", "\"value\": 2.0")
        .replace("\"n_paths\": 4000", "\"n_paths\": 500");
    let out = run_config("moment-bound", &text, dir.path());
    assert_eq!(out.status.code(), Some(1));
    let r = report(dir.path());
    assert_eq!(r["verdict"], "fail");
    assert_eq!(r["failures"][0]["check"], "mean_oracle");
    let stderr: Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(stderr["failures"][0]["check"], "mean_oracle");
}

#[test]
fn violated_hypotheses_are_informational() {
    let dir = tempfile::tempdir().unwrap();
    let text = r#"{
        "experiment": "exit-identity", "seed": 1,
        "family": {"family": "pointmass", "xs": [0.0, 1.0]},
        "domain": {"type": "lower_ray", "a": 0.0},
        "clamp": 1.0, "grid": {"dt_levels": [0.1, 0.01]},
        "n_paths": 4, "lambda": 1.0, "epsilon": 1.0
    }"#;
    let out = run_config("exit-identity", text, dir.path());
    assert_eq!(out.status.code(), Some(0));
    let r = report(dir.path());
    assert_eq!(r["verdict"], "informational");
    assert_eq!(r["hypotheses"]["passed"], false);
    assert_eq!(r["hypotheses"]["label"], "hypotheses violated, expect failure");
    assert_eq!(r["metrics"]["finest_gap"], 1.0);
}

#[test]
fn exports_are_written() {
    let dir = tempfile::tempdir().unwrap();
    let text = std::fs::read_to_string(configs().join("exit_stats.json"))
        .unwrap()
        .replace("\"n_paths\": 2000", "\"n_paths\": 50");
    let out = run_config("exit-stats", &text, dir.path());
    assert_eq!(out.status.code(), Some(0));
    let csv = std::fs::read_to_string(dir.path().join("run/exits.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 3 * 50);

    let text = std::fs::read_to_string(configs().join("simulate.json")).unwrap();
    let out = run_config("simulate", &text, dir.path());
    assert_eq!(out.status.code(), Some(0));
    let nd = std::fs::read_to_string(dir.path().join("run/paths.ndjson")).unwrap();
    assert_eq!(nd.lines().count(), 5 * 4);
    let first: Value = serde_json::from_str(nd.lines().next().unwrap()).unwrap();
    assert_eq!(first["states"].as_array().unwrap().len(), 201);
}

#[test]
fn output_dir_from_config_is_used() {
    let dir = tempfile::tempdir().unwrap();
    let target = dir.path().join("from_config");
    let text = format!(
        r#"{{"experiment": "counterexample", "seed": 0, "case": {{"which": "pointmass"}}, "output_dir": {}}}"#,
        serde_json::to_string(target.to_str().unwrap()).unwrap()
    );
    let cfg = dir.path().join("c.json");
    std::fs::write(&cfg, text).unwrap();
    let out = nlexit(&["counterexample", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    assert!(target.join("report.json").exists());
}
