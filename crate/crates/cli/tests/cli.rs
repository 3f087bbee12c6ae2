// SPDX-License-Identifier: MIT OR Apache-2.0

use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_rca-cusum"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn")
}

fn simulate(dir: &Path, extra: &[&str]) -> String {
    let path = dir.join("series.csv");
    let p = path.to_str().unwrap().to_string();
    let mut args = vec!["simulate", "-n", "300", "--seed", "11", "-o", &p];
    args.extend_from_slice(extra);
    let out = run(&args);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    p
}

#[test]
fn simulate_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let p = simulate(dir.path(), &[]);
    let a = std::fs::read_to_string(&p).unwrap();
    let p = simulate(dir.path(), &[]);
    let b = std::fs::read_to_string(&p).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.lines().count(), 302);
    assert!(a.starts_with("i,y\n"));
}

#[test]
fn test_reports_and_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let p = simulate(
        dir.path(),
        &[
            "--break-at",
            "0.5",
            "--beta-after",
            "1.2",
            "--sigma1-sq",
            "0",
        ],
    );
    let out = run(&["test", &p, "--column", "y"]);
    assert_eq!(out.status.code(), Some(0));
    let doc: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(doc["command"], "test");
    assert_eq!(doc["tests"][0]["reject"], true);
    // the effective configuration is echoed
    assert_eq!(doc["config"]["test"]["alpha"], 0.05);
    assert_eq!(doc["config"]["test"]["cv_source"], "analytic");

    let out = run(&["test", &p, "--column", "y", "--fail-on-reject"]);
    assert_eq!(out.status.code(), Some(3));

    let out = run(&["test", &p, "--column", "y", "--format", "plot"]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    // header plus grid k = 2..N-2
    assert_eq!(text.lines().count(), 1 + 297);
}

#[test]
fn usage_and_data_errors() {
    let out = run(&["test", "/no/such/file.csv"]);
    assert_eq!(out.status.code(), Some(2));
    let out = run(&["frobnicate"]);
    assert_eq!(out.status.code(), Some(1));
    let dir = tempfile::tempdir().unwrap();
    let p = simulate(dir.path(), &[]);
    // the robust weighted sup needs data-driven critical values
    let out = run(&[
        "test",
        &p,
        "--column",
        "y",
        "--kappa",
        "0.25",
        "--hetero",
        "--cv-source",
        "analytic",
    ]);
    assert_eq!(out.status.code(), Some(1));
    let bad = dir.path().join("bad.csv");
    std::fs::write(&bad, "x\n1\n2\nfoo\n").unwrap();
    let out = run(&["test", bad.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(err.contains("line 4"), "{err}");
    let out = run(&["--help"]);
    assert_eq!(out.status.code(), Some(0));
}

#[test]
fn segment_and_transforms() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("levels.csv");
    let mut text = String::from("date;level\n");
    for i in 0..200 {
        text.push_str(&format!("d{i};{}\n", (1.0 + 0.01 * (i as f64).sin()).exp()));
    }
    std::fs::write(&path, text).unwrap();
    let p = path.to_str().unwrap();
    let out = run(&[
        "segment",
        p,
        "--column",
        "level",
        "--transform",
        "log-diff",
        "--date-column",
        "date",
    ]);
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let doc: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(doc["input"]["n"], 198);
    assert_eq!(doc["input"]["date_range"][0], "d1");
    assert!(doc["segmentations"][0]["breaks"].is_array());
}

#[test]
fn cv_verb() {
    let out = run(&["cv", "--family", "de", "--alpha", "0.10"]);
    assert_eq!(out.status.code(), Some(0));
    let doc: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!((doc["value"].as_f64().unwrap() - 2.943_515).abs() < 1e-6);

    let dir = tempfile::tempdir().unwrap();
    let cache = dir.path().join("cv.txt");
    let c = cache.to_str().unwrap();
    let args = [
        "cv", "--kappa", "0.25", "--reps", "500", "--grid", "200", "--cache", c,
    ];
    let first = run(&args);
    assert_eq!(first.status.code(), Some(0));
    let second = run(&args);
    let v1: serde_json::Value = serde_json::from_slice(&first.stdout).unwrap();
    let v2: serde_json::Value = serde_json::from_slice(&second.stdout).unwrap();
    assert_eq!(v1["value"], v2["value"]);
    assert!(std::fs::read_to_string(&cache)
        .unwrap()
        .starts_with("#version=1"));
}

#[test]
fn bench_small_size_table() {
    let out = run(&[
        "bench",
        "--preset",
        "homoskedastic",
        "--hetero",
        "homo-homo",
        "--beta0",
        "0.5",
        "-n",
        "100",
        "--kappa",
        "0,1",
        "--reps",
        "100",
    ]);
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.starts_with("# delta=0"));
    assert_eq!(text.lines().count(), 4);
}
