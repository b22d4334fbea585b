use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn panco(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_panco"))
        .args(args)
        .output()
        .unwrap()
}

fn report(dir: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(dir.join("report.json")).unwrap()).unwrap()
}

const SHORT_SQUARE: [&str; 10] = [
    "--set",
    "square_wave.duration_s=2",
    "--set",
    "square_wave.period_x_s=1",
    "--set",
    "square_wave.period_y_s=1.4",
    "--set",
    "square_wave.response_window_s=0.2",
    "--set",
    "settle.time_s=10",
];

fn run_square(dir: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["run", "square_wave", "--out", dir.to_str().unwrap()];
    args.extend(SHORT_SQUARE);
    args.extend(extra);
    panco(&args)
}

#[test]
fn unknown_key_fails_with_report() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("bad");
    let out = panco(&[
        "run",
        "fig2",
        "--set",
        "drive.nonsense=1",
        "--out",
        dir.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(1));
    let r = report(&dir);
    assert_eq!(r["status"], "error");
    assert_eq!(r["kind"], "unknown_key");
    assert!(r["message"].as_str().unwrap().contains("drive.nonsense"));
}

#[test]
fn unknown_scenario_fails() {
    let tmp = tempfile::tempdir().unwrap();
    let out = panco(&[
        "run",
        "no_such_scenario",
        "--out",
        tmp.path().to_str().unwrap(),
    ]);
    assert_ne!(out.status.code(), Some(0));
}

#[test]
fn fit_reproduces_run_channels_bit_for_bit() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("sq");
    let out = run_square(&dir, &[]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert_eq!(report(&dir)["status"], "ok");

    let refit = tmp.path().join("refit/channels.csv");
    let out = panco(&[
        "fit",
        "--signatures",
        dir.join("signatures.csv").to_str().unwrap(),
        "--trace",
        dir.join("traces.csv").to_str().unwrap(),
        "--out",
        refit.to_str().unwrap(),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let a = std::fs::read(dir.join("channels.csv")).unwrap();
    let b = std::fs::read(&refit).unwrap();
    assert!(a == b, "refitted channels differ from the run output");
    assert!(refit.with_extension("json").exists());
}

#[test]
fn worker_count_does_not_change_results() {
    let tmp = tempfile::tempdir().unwrap();
    let one = tmp.path().join("w1");
    let three = tmp.path().join("w3");
    assert!(run_square(&one, &["--workers", "1"]).status.success());
    assert!(run_square(&three, &["--workers", "3"]).status.success());
    for f in ["channels.csv", "signatures.csv"] {
        assert!(
            std::fs::read(one.join(f)).unwrap() == std::fs::read(three.join(f)).unwrap(),
            "{f}"
        );
    }
}

#[test]
fn fit_of_empty_trace_is_a_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    let empty = tmp.path().join("empty.csv");
    std::fs::write(&empty, "").unwrap();
    let out = panco(&[
        "fit",
        "--signatures",
        "missing.csv",
        "--trace",
        empty.to_str().unwrap(),
        "--out",
        tmp.path().join("x.csv").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn noisy_run_without_seed_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("noisy");
    let out = run_square(&dir, &["--set", "noise_sigma=1e-4"]);
    assert!(!out.status.success());
    let r = report(&dir);
    assert_eq!(r["status"], "error");
    assert!(r["message"].as_str().unwrap().contains("seed"), "{r}");
}

#[test]
fn config_is_recorded_with_overrides_applied() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("cfg");
    assert!(run_square(&dir, &["--seed", "9"]).status.success());
    let cfg: Value =
        serde_json::from_str(&std::fs::read_to_string(dir.join("config.json")).unwrap()).unwrap();
    assert_eq!(cfg["seed"], 9);
    assert_eq!(cfg["square_wave"]["duration_s"], 2.0);
}
