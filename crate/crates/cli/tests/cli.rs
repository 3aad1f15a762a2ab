//! End-to-end checks of the `tfdw` binary: exit codes, error reports and
//! the artifacts written to the output directory.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tfdw_cli::config::StudyConfig;

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("configs")
}

fn tfdw(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tfdw"))
        .args(args)
        .arg("--out")
        .arg(out)
        .env_remove("TFDW_THREADS")
        .output()
        .expect("spawn tfdw")
}

fn stderr_report(o: &Output) -> Value {
    let text = String::from_utf8_lossy(&o.stderr);
    let line = text.lines().last().expect("stderr report");
    serde_json::from_str(line).expect("stderr is a JSON report")
}

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let p = dir.join("config.json");
    std::fs::write(&p, text).unwrap();
    p
}

fn chain_cell_with(extra: &str) -> String {
    let base = std::fs::read_to_string(configs().join("chain_cell.json")).unwrap();
    base.replacen('{', &format!("{{ {extra},"), 1)
}

#[test]
fn jellium_scan_runs_without_config() {
    let tmp = tempfile::tempdir().unwrap();
    let o = tfdw(&["jellium-scan"], tmp.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let summary: Value = serde_json::from_slice(&o.stdout).unwrap();
    let t = summary["threshold_estimate"].as_f64().unwrap();
    assert!((t - 0.4f64.powf(1.5)).abs() < 1e-6, "{t}");
    assert!(tmp.path().join("jellium_scan.csv").exists());
    assert!(tmp.path().join("jellium_scan.json").exists());
}

#[test]
fn missing_config_is_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    let o = tfdw(&["solve-cell"], tmp.path());
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(stderr_report(&o)["kind"], "config");
}

#[test]
fn unknown_field_is_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), &chain_cell_with("\"tolerance\": 1e-8"));
    let o = tfdw(&["solve-cell", "--config", cfg.to_str().unwrap()], tmp.path());
    assert_eq!(o.status.code(), Some(2));
    let report = stderr_report(&o);
    assert_eq!(report["exit_code"], 2);
    assert!(report["message"].as_str().unwrap().contains("tolerance"));
}

#[test]
fn bad_flag_is_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    let o = tfdw(&["solve-cell", "--bogus"], tmp.path());
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(stderr_report(&o)["kind"], "config");
}

#[test]
fn cell_commands_reject_macro_field() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = configs().join("quasi_1d.json");
    for cmd in ["solve-cell", "stability-scan"] {
        let o = tfdw(&[cmd, "--config", cfg.to_str().unwrap()], tmp.path());
        assert_eq!(o.status.code(), Some(2), "{cmd}");
    }
}

#[test]
fn solver_failure_is_exit_3_with_payload() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), &chain_cell_with("\"cell\": {\"descent_max_iter\": 1}"));
    let o = tfdw(&["solve-cell", "--config", cfg.to_str().unwrap()], tmp.path());
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
    let report = stderr_report(&o);
    assert_eq!(report["exit_code"], 3);
    assert_ne!(report["kind"], "config");
    assert!(report["payload"].is_object());
}

#[test]
fn solve_cell_writes_state_and_summary() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = configs().join("chain_cell.json");
    let o = tfdw(&["solve-cell", "--config", cfg.to_str().unwrap(), "--seed", "7"], tmp.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let summary: Value = serde_json::from_slice(&o.stdout).unwrap();
    let electrons = summary["electrons_per_cell"].as_f64().unwrap();
    assert!((electrons - 1.6).abs() < 1e-8, "{electrons}");
    let written: Value = serde_json::from_str(&std::fs::read_to_string(tmp.path().join("solve_cell.json")).unwrap()).unwrap();
    assert_eq!(written, summary);
    assert!(tmp.path().join("cell").is_dir());
}

#[test]
fn schema_lists_every_config_key() {
    let schema: Value =
        serde_json::from_str(&std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("schema/study_config.schema.json")).unwrap())
            .unwrap();
    let props = schema["properties"].as_object().unwrap();
    let cfg = StudyConfig::load(&configs().join("quasi_1d.json")).unwrap();
    let keys = serde_json::to_value(&cfg).unwrap();
    let keys = keys.as_object().unwrap();
    for k in keys.keys() {
        assert!(props.contains_key(k), "schema misses `{k}`");
    }
    for k in props.keys() {
        assert!(keys.contains_key(k), "schema has extra `{k}`");
    }
    assert_eq!(schema["additionalProperties"], false);
}

#[test]
fn shipped_configs_parse() {
    for name in ["quasi_1d.json", "chain_cell.json"] {
        let c = StudyConfig::load(&configs().join(name)).unwrap();
        assert!(c.crystal().is_ok(), "{name}");
    }
}
