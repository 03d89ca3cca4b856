use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_robustprune"));
    c.env("RUST_LOG", "warn");
    c
}

fn smoke_config() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("configs/smoke.toml")
}

fn error_of(out: &Output) -> Value {
    let stderr = String::from_utf8_lossy(&out.stderr);
    let line = stderr
        .lines()
        .rev()
        .find(|l| l.starts_with('{'))
        .unwrap_or_else(|| panic!("no error record in {stderr}"));
    let v: Value = serde_json::from_str(line).expect("error record is JSON");
    v["error"].clone()
}

fn summary_of(out: &Output) -> Value {
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).expect("summary is JSON")
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let out = bin().args(["train", "--bogus"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_of(&out)["kind"], "usage");
}

#[test]
fn missing_and_invalid_configs_name_the_field() {
    let out = bin().args(["train"]).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(error_of(&out)["field"], "--config");

    let cfg = smoke_config();
    let out = bin()
        .args(["train", "--config"])
        .arg(&cfg)
        .arg("--eval_attack.epsilon=-1")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    let e = error_of(&out);
    assert_eq!(e["kind"], "config");
    assert_eq!(e["field"], "eval_attack.epsilon");

    let out = bin()
        .args(["experiment", "nonsense", "--config"])
        .arg(&cfg)
        .output()
        .unwrap();
    assert_eq!(error_of(&out)["field"], "experiment");
}

#[test]
fn corrupt_checkpoint_reports_parse_offset() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.ckpt");
    std::fs::write(&bad, b"NOTACKPT and then some").unwrap();
    let out = bin()
        .args(["histogram", "--checkpoint"])
        .arg(&bad)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    let e = error_of(&out);
    assert_eq!(e["kind"], "parse");
    assert_eq!(e["offset"], 0);
}

#[test]
fn data_dir_falls_back_to_environment() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin()
        .args(["train", "--config"])
        .arg(smoke_config())
        .arg("--data.dataset=mnist")
        .arg(format!("--output_dir={}", dir.path().display()))
        .env("ROBUSTPRUNE_DATA_DIR", dir.path().join("nowhere"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    let e = error_of(&out);
    assert!(e.to_string().contains("nowhere"), "{e}");
}

#[test]
fn train_prune_attack_eval_histogram_transfer() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = smoke_config();
    let run = |args: &[&str]| {
        let out = bin()
            .args(args)
            .arg("--config")
            .arg(&cfg)
            .arg(format!("--output_dir={}", dir.path().display()))
            .arg("--train.epochs=1")
            .output()
            .unwrap();
        summary_of(&out)
    };
    let p = |name: &str| dir.path().join(name).display().to_string();

    let t = run(&["train", "--width", "2", "--out", &p("dense.ckpt")]);
    assert!(t["adversarial_accuracy"].as_f64().is_some());
    assert!(dir.path().join("dense.ckpt.epochs.csv").exists());

    let warm = p("dense.ckpt");
    let pr = run(&[
        "prune",
        "--warm-checkpoint",
        &warm,
        "--keep-ratio",
        "0.5",
        "--out",
        &p("pruned.ckpt"),
    ]);
    assert!(pr["natural_accuracy"].as_f64().is_some());
    let log = std::fs::read_to_string(dir.path().join("pruned.ckpt.admm.csv")).unwrap();
    assert_eq!(log.lines().count(), 1 + 3);

    let a = run(&[
        "attack",
        "--checkpoint",
        &p("pruned.ckpt"),
        "--steps",
        "2",
        "--out",
        &p("attack.csv"),
    ]);
    assert_eq!(a["samples"], 100);
    let e = run(&["eval", "--checkpoint", &p("pruned.ckpt")]);
    assert!(e["natural_accuracy"].as_f64().is_some());

    let h = summary_of(
        &bin()
            .args(["histogram", "--checkpoint", &p("pruned.ckpt")])
            .output()
            .unwrap(),
    );
    assert!(h["zero_fraction"].as_f64().unwrap() > 0.0);

    let tr = run(&[
        "transfer",
        "--checkpoint",
        &format!("dense={}", p("dense.ckpt")),
        "--checkpoint",
        &format!("pruned={}", p("pruned.ckpt")),
    ]);
    assert_eq!(tr["models"].as_array().unwrap().len(), 2);
}
