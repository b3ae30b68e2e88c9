use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use reconfig_harness::output::sha256_hex;
use reconfig_harness::{ExperimentConfig, Scenario};

fn reconfig(args: &[&str], envs: &[(&str, &Path)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_reconfig"));
    cmd.args(args).env_remove("RECONFIG_OUTPUT_DIR").env_remove("RECONFIG_WORKERS");
    for (k, v) in envs {
        cmd.env(k, v);
    }
    cmd.output().expect("binary runs")
}

fn repo_configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn stderr_record(out: &Output) -> serde_json::Value {
    serde_json::from_slice(&out.stderr).expect("stderr is one JSON record")
}

#[test]
fn shipped_configs_are_the_defaults() {
    for s in Scenario::ALL {
        let path = repo_configs().join(format!("{s}.toml"));
        let loaded = ExperimentConfig::load(&path).unwrap();
        assert_eq!(loaded, ExperimentConfig::default_for(s), "{}", path.display());
        let out = reconfig(&["validate", path.to_str().unwrap()], &[]);
        assert!(out.status.success());
    }
}

#[test]
fn lists_scenarios() {
    let out = reconfig(&["scenarios"], &[]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    for s in Scenario::ALL {
        assert!(text.contains(s.name()));
    }
}

#[test]
fn run_writes_checksummed_artifacts_to_env_dir() {
    let dir = tempfile::tempdir().unwrap();
    let target = dir.path().join("sweep");
    let config = repo_configs().join("threshold-sweep.toml");
    let out = reconfig(&["run", config.to_str().unwrap(), "--check"], &[("RECONFIG_OUTPUT_DIR", &target)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.lines().any(|l| l.starts_with("PASS prediction_agreement")));
    assert!(!stdout.contains("FAIL"));

    let manifest: serde_json::Value = serde_json::from_slice(&fs::read(target.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["scenario"], "threshold-sweep");
    let files = manifest["files"].as_object().unwrap();
    for name in ["threshold_sweep.csv", "threshold_sweep.csv.json", "checks.csv", "config.json", "capacity_reports.json"] {
        let bytes = fs::read(target.join(name)).unwrap();
        assert_eq!(files[name], sha256_hex(&bytes), "{name}");
    }
    assert!(!manifest["seeds"].as_array().unwrap().is_empty());
}

#[test]
fn flag_overrides_env_dir() {
    let dir = tempfile::tempdir().unwrap();
    let (flag, env) = (dir.path().join("flag"), dir.path().join("env"));
    let config = repo_configs().join("esl-gap.toml");
    let out = reconfig(
        &["run", config.to_str().unwrap(), "--output-dir", flag.to_str().unwrap()],
        &[("RECONFIG_OUTPUT_DIR", &env)],
    );
    assert!(out.status.success());
    assert!(flag.join("manifest.json").exists());
    assert!(!env.exists());
}

#[test]
fn unstable_step_size_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("unstable.toml");
    let mut config = ExperimentConfig::default_for(Scenario::ThresholdSweep);
    config.rule.step_size = 10.0;
    fs::write(&path, config.to_toml()).unwrap();
    let out = reconfig(&["validate", path.to_str().unwrap()], &[]);
    assert_eq!(out.status.code(), Some(1));
    let record = stderr_record(&out);
    assert_eq!(record["field"], "rule.step_size");
    assert_eq!(record["exit_code"], 1);
}

#[test]
fn unknown_keys_and_missing_files_are_config_errors() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("typo.toml");
    let text = ExperimentConfig::default_for(Scenario::RankDecay).to_toml() + "\nmaster_sed = 3\n";
    fs::write(&path, text).unwrap();
    assert_eq!(reconfig(&["validate", path.to_str().unwrap()], &[]).status.code(), Some(1));

    let missing = dir.path().join("missing.toml");
    let out = reconfig(&["run", missing.to_str().unwrap()], &[]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(stderr_record(&out)["exit_code"], 1);
}

#[test]
fn bad_worker_count_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let config = repo_configs().join("esl-gap.toml");
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_reconfig"));
    let out = cmd
        .args(["run", config.to_str().unwrap(), "--output-dir", dir.path().to_str().unwrap()])
        .env("RECONFIG_WORKERS", "0")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(stderr_record(&out)["field"], "RECONFIG_WORKERS");
}
