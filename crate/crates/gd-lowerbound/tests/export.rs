use std::fs;
use std::process::Command;

use gd_lowerbound::experiment::{export_report, run_gap_trials, ExperimentConfig};
use sha2::{Digest, Sha256};

fn small_config(seed: u64) -> ExperimentConfig {
    ExperimentConfig { d: 64, m: 4, horizon: 200, trials: 8, code_size: 8, seed, ..Default::default() }
}

fn digest(path: &std::path::Path) -> Vec<u8> {
    Sha256::digest(fs::read(path).expect("readable export")).to_vec()
}

#[test]
fn export_is_byte_stable_for_a_fixed_seed() {
    let dir = tempfile::tempdir().unwrap();
    let first = dir.path().join("first.csv");
    let second = dir.path().join("second.csv");
    export_report(&run_gap_trials(&small_config(7)).unwrap(), &first).unwrap();
    export_report(&run_gap_trials(&small_config(7)).unwrap(), &second).unwrap();
    assert_eq!(digest(&first), digest(&second));
    assert_eq!(digest(&first.with_extension("json")), digest(&second.with_extension("json")));

    let csv = fs::read_to_string(&first).unwrap();
    assert_eq!(csv.lines().count(), 1 + 8);
    assert!(csv.starts_with("trial,seed,vstar_found,gap,bound,bound_alt,pass"));
}

#[test]
fn export_changes_with_the_seed() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    export_report(&run_gap_trials(&small_config(1)).unwrap(), &a).unwrap();
    export_report(&run_gap_trials(&small_config(2)).unwrap(), &b).unwrap();
    assert_ne!(digest(&a), digest(&b));
}

#[test]
fn cli_runs_a_small_experiment_and_writes_its_report() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run.csv");
    let status = Command::new(env!("CARGO_BIN_EXE_gd-lowerbound"))
        .args(["--d", "64", "--m", "4", "--T", "200", "--trials", "4", "--code-size", "8", "--seed", "3"])
        .arg("--out")
        .arg(&out)
        .output()
        .expect("binary runs");
    assert_eq!(status.status.code(), Some(0), "stderr: {}", String::from_utf8_lossy(&status.stderr));
    let summary: serde_json::Value = serde_json::from_slice(&status.stdout).expect("json summary on stdout");
    assert!(summary.is_object());
    assert!(out.exists() && out.with_extension("json").exists());
}

#[test]
fn cli_rejects_conflicting_step_size_flags() {
    let status = Command::new(env!("CARGO_BIN_EXE_gd-lowerbound"))
        .args(["--eta", "0.1", "--eta-preset", "sqrtT"])
        .output()
        .expect("binary runs");
    assert_eq!(status.status.code(), Some(2));
}

#[test]
fn cli_rejects_an_invalid_configuration() {
    let status = Command::new(env!("CARGO_BIN_EXE_gd-lowerbound"))
        .args(["--d", "0", "--trials", "1"])
        .output()
        .expect("binary runs");
    assert_eq!(status.status.code(), Some(2));
}

#[test]
fn cli_reports_failure_when_a_single_block_leaves_no_staircase() {
    let status = Command::new(env!("CARGO_BIN_EXE_gd-lowerbound"))
        .args(["--d", "64", "--m", "4", "--T", "50", "--trials", "4", "--code-size", "8", "--seed", "3"])
        .output()
        .expect("binary runs");
    assert_eq!(status.status.code(), Some(1));
}
