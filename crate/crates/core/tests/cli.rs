use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn brokersim(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_brokersim"))
        .current_dir(dir)
        .env_remove("BROKERSIM_OUT_DIR")
        .args(args)
        .output()
        .unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

const SHORT: [&str; 4] = ["--sim-time", "6", "--warmup", "1"];

#[test]
fn simulate_writes_artifacts() {
    let tmp = TempDir::new().unwrap();
    let mut args = vec!["simulate", "--scenario", "face-recognition-accel", "--out", "run"];
    args.extend(SHORT);
    let o = brokersim(tmp.path(), &args);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("STABLE"));
    let mut names: Vec<String> = std::fs::read_dir(tmp.path().join("run"))
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    names.sort();
    assert_eq!(names, ["frames.csv", "summary.json", "utilization.csv"]);
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(tmp.path().join("run/summary.json")).unwrap()).unwrap();
    assert_eq!(summary["scenario"], "face-recognition-accel");
    assert_eq!(summary["verdict"]["stable"], true);
}

#[test]
fn default_output_directory_follows_the_environment() {
    let tmp = TempDir::new().unwrap();
    let mut args = vec!["simulate", "--scenario", "object-detection-accel"];
    args.extend(SHORT);
    let o = brokersim(tmp.path(), &args);
    assert_eq!(code(&o), 0);
    assert!(tmp.path().join("brokersim-out/frames.csv").exists());

    let o = Command::new(env!("CARGO_BIN_EXE_brokersim"))
        .current_dir(tmp.path())
        .env("BROKERSIM_OUT_DIR", "elsewhere")
        .args(&args)
        .output()
        .unwrap();
    assert_eq!(code(&o), 0);
    assert!(tmp.path().join("elsewhere/summary.json").exists());
}

#[test]
fn same_seed_gives_identical_frames() {
    let tmp = TempDir::new().unwrap();
    for out in ["a", "b"] {
        let mut args = vec!["simulate", "--scenario", "face-recognition-native", "--seed", "11", "--out", out];
        args.extend(SHORT);
        assert_eq!(code(&brokersim(tmp.path(), &args)), 0);
    }
    let a = std::fs::read(tmp.path().join("a/frames.csv")).unwrap();
    let b = std::fs::read(tmp.path().join("b/frames.csv")).unwrap();
    assert!(a.len() > 100);
    assert_eq!(a, b);
}

#[test]
fn configuration_errors_exit_one() {
    let tmp = TempDir::new().unwrap();
    for args in [
        vec!["simulate", "--scenario", "missing.toml"],
        vec!["simulate", "--scenario", "face-recognition-accel", "--accel", "0.5"],
        vec!["simulate", "--scenario", "face-recognition-accel", "--warmup", "700"],
        vec!["sweep", "--scenario", "face-recognition-accel"],
        vec!["frobnicate"],
    ] {
        let o = brokersim(tmp.path(), &args);
        assert_eq!(code(&o), 1, "{args:?}");
        assert!(!o.stderr.is_empty(), "{args:?}");
    }
    std::fs::write(tmp.path().join("bad.toml"), "name = \"x\"\nproducers = 2\nconsumers = 2\nbrokers = 2\nreplication_factor = 3\n").unwrap();
    let o = brokersim(tmp.path(), &["simulate", "--scenario", "bad.toml"]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("replication"));
    assert!(!tmp.path().join("brokersim-out").exists());
}

#[test]
fn required_stability_exits_two_when_unstable() {
    let tmp = TempDir::new().unwrap();
    let args = [
        "simulate",
        "--scenario",
        "object-detection-accel",
        "--accel",
        "16",
        "--sim-time",
        "40",
        "--warmup",
        "5",
        "--divergence-limit",
        "5",
        "--require-stable",
        "--out",
        "run",
    ];
    let o = brokersim(tmp.path(), &args);
    assert_eq!(code(&o), 2, "{}", stdout(&o));
    assert!(stdout(&o).contains("UNSTABLE"));
    assert!(tmp.path().join("run/summary.json").exists());
}

#[test]
fn no_temporary_files_remain() {
    let tmp = TempDir::new().unwrap();
    let mut args = vec!["sweep", "--scenario", "face-recognition-accel", "--accel-list", "1,2", "--out", "s"];
    args.extend(SHORT);
    let o = brokersim(tmp.path(), &args);
    assert_eq!(code(&o), 0);
    let entries: Vec<_> = std::fs::read_dir(tmp.path().join("s")).unwrap().collect();
    assert_eq!(entries.len(), 1);
    let csv = std::fs::read_to_string(tmp.path().join("s/sweep.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);
}

#[test]
fn analyze_reports_the_stability_edge() {
    let tmp = TempDir::new().unwrap();
    let o = brokersim(tmp.path(), &["analyze", "--scenario", "face-recognition-accel", "--accel-list", "6,8"]);
    assert_eq!(code(&o), 0);
    let text = stdout(&o);
    assert!(text.contains("a=6: stable"));
    assert!(text.contains("a=8: unstable"));
    let o = brokersim(tmp.path(), &["analyze", "--fraction", "0.9", "--accel-list", "10"]);
    assert_eq!(code(&o), 0);
}

#[test]
fn plan_and_tco_and_show() {
    let tmp = TempDir::new().unwrap();
    let o = brokersim(
        tmp.path(),
        &["plan", "--scenario", "face-recognition-accel", "--target-accel", "8", "--no-confirm"],
    );
    assert_eq!(code(&o), 0);
    assert!(stdout(&o).contains("drives per broker  2"));
    let o = brokersim(tmp.path(), &["tco", "--out", "t"]);
    assert_eq!(code(&o), 0);
    assert!(tmp.path().join("t/tco.json").exists());
    let o = brokersim(tmp.path(), &["show"]);
    assert_eq!(code(&o), 0);
    assert!(stdout(&o).contains("object-detection-accel"));
    let o = brokersim(tmp.path(), &["--help"]);
    assert_eq!(code(&o), 0);
}
