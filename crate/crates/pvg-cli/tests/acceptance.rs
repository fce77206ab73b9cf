//! Command-line acceptance: re-running any command with the same
//! configuration and seed produces byte-identical output files.

use std::path::{Path, PathBuf};
use std::process::Command;

fn binary() -> &'static str {
    env!("CARGO_BIN_EXE_pvg")
}

fn fresh_dir(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("pvg-acceptance-{tag}-{}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn run(args: &[&str]) {
    let output = Command::new(binary())
        .args(args)
        .output()
        .expect("command runs");
    assert!(
        output.status.success(),
        "command {:?} failed: {}",
        args,
        String::from_utf8_lossy(&output.stderr)
    );
}

fn read(path: &Path) -> Vec<u8> {
    std::fs::read(path).unwrap_or_else(|e| panic!("missing {}: {e}", path.display()))
}

#[test]
fn criterion_12_cli_determinism() {
    // Dataset generation.
    let d1 = fresh_dir("gen-a");
    let d2 = fresh_dir("gen-b");
    for dir in [&d1, &d2] {
        run(&[
            "gen-data",
            "--k",
            "120",
            "--seed",
            "7",
            "--out",
            dir.to_str().unwrap(),
        ]);
    }
    let dataset_identical = read(&d1.join("dataset.jsonl")) == read(&d2.join("dataset.jsonl"));

    // Training metrics.
    let t1 = fresh_dir("train-a");
    let t2 = fresh_dir("train-b");
    for dir in [&t1, &t2] {
        run(&[
            "train",
            "--protocol",
            "nip",
            "--method",
            "expert-iteration",
            "--steps",
            "3",
            "--seed",
            "9",
            "--out",
            dir.to_str().unwrap(),
        ]);
    }
    let train_identical = read(&t1.join("metrics.csv")) == read(&t2.join("metrics.csv"))
        && read(&t1.join("trace.csv")) == read(&t2.join("trace.csv"));

    // Coefficient sweep metrics.
    let z1 = fresh_dir("zk-a");
    let z2 = fresh_dir("zk-b");
    for dir in [&z1, &z2] {
        run(&[
            "zk-sweep",
            "--steps",
            "8",
            "--seed",
            "5",
            "--out",
            dir.to_str().unwrap(),
        ]);
    }
    let sweep_identical = read(&z1.join("metrics.csv")) == read(&z2.join("metrics.csv"));

    let pass = dataset_identical && train_identical && sweep_identical;
    println!(
        "[{}] criterion 12 command determinism: dataset {dataset_identical}, training \
         {train_identical}, sweep {sweep_identical}",
        if pass { "PASS" } else { "FAIL" }
    );
    assert!(pass);
    for dir in [d1, d2, t1, t2, z1, z2] {
        let _ = std::fs::remove_dir_all(dir);
    }
}

#[test]
fn unknown_subcommands_exit_with_the_usage_code() {
    let output = Command::new(binary()).arg("frobnicate").output().unwrap();
    assert_eq!(output.status.code(), Some(2));
}

#[test]
fn reproduction_pipeline_passes_and_is_self_validating() {
    let dir = fresh_dir("reproduce");
    let output = Command::new(binary())
        .args([
            "reproduce-counterexample",
            "--a",
            "0.2",
            "--seed",
            "1",
            "--out",
        ])
        .arg(&dir)
        .output()
        .unwrap();
    assert_eq!(
        output.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&output.stdout)
    );
    let stdout = String::from_utf8_lossy(&output.stdout);
    assert!(stdout.contains("[PASS] soundness error"));
    assert!(!stdout.contains("[FAIL]"));
    let _ = std::fs::remove_dir_all(dir);
}
