use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_fairldp"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Small two-group dataset with a feature, a categorical column and a text
/// label.
fn write_data(dir: &Path, rows: usize) -> PathBuf {
    let mut s = String::from("age,job,sex,income\n");
    for i in 0..rows {
        let female = i % 10 < 3;
        let rich = if female { i % 7 < 2 } else { i % 7 < 4 };
        let job = ["eng", "art", "law"][i % 3];
        let age = 20 + (i * 7) % 40 + if rich { 5 } else { 0 };
        writeln!(s, "{age},{job},{},{}", if female { "F" } else { "M" }, if rich { ">50K" } else { "<=50K" }).unwrap();
    }
    let p = dir.join("data.csv");
    std::fs::write(&p, s).unwrap();
    p
}

fn write_config(dir: &Path, body: &str) -> PathBuf {
    let p = dir.join("config.json");
    std::fs::write(&p, body).unwrap();
    p
}

const BASE: &str = r#"{"schema_version": 1, "mechanism": "opt_binary", "epsilon": 1.0, "seed": 3,
  "columns": {"sensitive": "sex", "label": "income", "positive_label": ">50K"},
  "split": {"train_fraction": 0.8, "trials": 3}}"#;

fn setup() -> (TempDir, PathBuf, PathBuf) {
    let dir = TempDir::new().unwrap();
    let data = write_data(dir.path(), 400);
    let cfg = write_config(dir.path(), BASE);
    (dir, data, cfg)
}

#[test]
fn design_then_verify() {
    let (dir, data, cfg) = setup();
    let out = dir.path().join("design.json");
    let r = run(&["design", "--config", path(&cfg), "--data", path(&data), "--out", path(&out)]);
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(v["mechanism"], "opt_binary");
    assert_eq!(v["sensitive_values"], serde_json::json!(["F", "M"]));
    assert!((v["epsilon_star"].as_f64().unwrap() - 1.0).abs() < 1e-9);
    let r = run(&["verify", "--design", path(&out)]);
    assert!(r.status.success());
    let v: serde_json::Value = serde_json::from_slice(&r.stdout).unwrap();
    assert_eq!(v["passed"], true);
}

#[test]
fn tampered_design_fails_verification() {
    let (dir, data, cfg) = setup();
    let out = dir.path().join("design.json");
    assert!(run(&["design", "--config", path(&cfg), "--data", path(&data), "--out", path(&out)]).status.success());
    let mut v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    v["epsilon"] = serde_json::json!(0.2);
    std::fs::write(&out, v.to_string()).unwrap();
    let r = run(&["verify", "--design", path(&out)]);
    assert_eq!(r.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&r.stderr).contains("ldp"));
}

#[test]
fn flags_override_config() {
    let (_dir, data, cfg) = setup();
    let r = run(&["design", "--config", path(&cfg), "--data", path(&data), "--mechanism", "grr", "--epsilon", "2"]);
    assert!(r.status.success());
    let v: serde_json::Value = serde_json::from_slice(&r.stdout).unwrap();
    assert_eq!(v["mechanism"], "grr");
    assert_eq!(v["epsilon"], 2.0);
}

#[test]
fn perturb_is_reproducible() {
    let (dir, data, cfg) = setup();
    let design = dir.path().join("design.json");
    assert!(run(&["design", "--config", path(&cfg), "--data", path(&data), "--out", path(&design)]).status.success());
    let args = ["perturb", "--config", path(&cfg), "--data", path(&data), "--design", path(&design)];
    let a = run(&args);
    assert!(a.status.success(), "{}", String::from_utf8_lossy(&a.stderr));
    assert_eq!(a.stdout, run(&args).stdout);
    let text = String::from_utf8(a.stdout).unwrap();
    assert!(text.starts_with("# seed=3 mechanism_sha256="));
    let original = std::fs::read_to_string(&data).unwrap();
    for (x, y) in text.lines().skip(1).zip(original.lines()) {
        let (x, y): (Vec<&str>, Vec<&str>) = (x.split(',').collect(), y.split(',').collect());
        assert_eq!((x[0], x[1], x[3]), (y[0], y[1], y[3]));
    }
}

#[test]
fn evaluate_is_deterministic_and_writes_trials() {
    let (dir, data, cfg) = setup();
    let csv = dir.path().join("trials.csv");
    let par = run(&["evaluate", "--config", path(&cfg), "--data", path(&data), "--per-trial-csv", path(&csv)]);
    assert!(par.status.success(), "{}", String::from_utf8_lossy(&par.stderr));
    let ser = run(&["evaluate", "--config", path(&cfg), "--data", path(&data), "--serial"]);
    assert_eq!(par.stdout, ser.stdout);
    assert_eq!(std::fs::read_to_string(&csv).unwrap().lines().count(), 4);
    let report = dir.path().join("report.json");
    std::fs::write(&report, &par.stdout).unwrap();
    assert!(run(&["verify", "--report", path(&report)]).status.success());
}

#[test]
fn sweep_emits_long_table() {
    let (_dir, data, cfg) = setup();
    let r = run(&[
        "sweep", "--config", path(&cfg), "--data", path(&data), "--trials", "1",
        "--epsilons", "0.5,2", "--mechanisms", "non_private,rr,opt_binary",
    ]);
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    let text = String::from_utf8(r.stdout).unwrap();
    assert_eq!(text.lines().next().unwrap(), "mechanism,epsilon,metric,mean,ci_low,ci_high");
    assert_eq!(text.lines().count(), 1 + 3 * 2 * 5);
    let r = run(&["sweep", "--config", path(&cfg), "--data", path(&data)]);
    assert_eq!(r.status.code(), Some(2));
}

#[test]
fn exit_codes() {
    let (dir, data, cfg) = setup();
    // configuration
    let r = run(&["design", "--config", path(&cfg), "--data", path(&data), "--epsilon", "-1"]);
    assert_eq!(r.status.code(), Some(2));
    let bad = write_config(dir.path(), r#"{"schema_version": 1}"#);
    assert_eq!(run(&["design", "--config", path(&bad)]).status.code(), Some(2));
    // data
    let cfg = write_config(dir.path(), &BASE.replace("\"sex\"", "\"gender\""));
    let r = run(&["design", "--config", path(&cfg), "--data", path(&data)]);
    assert_eq!(r.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&r.stderr).contains("gender"));
    // infeasible budget
    let cfg = write_config(dir.path(), &BASE.replace("\"opt_binary\"", "\"opt_kary\", \"zeta\": 0.0"));
    let r = run(&["design", "--config", path(&cfg), "--data", path(&data)]);
    assert_eq!(r.status.code(), Some(3), "{}", String::from_utf8_lossy(&r.stderr));
    // clap usage errors also exit with 2
    assert_eq!(run(&["design"]).status.code(), Some(2));
}
