use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_metaimpact")).args(args).output().unwrap()
}

fn code(args: &[&str]) -> i32 {
    let out = run(args);
    out.status.code().unwrap_or_else(|| panic!("killed: {}", String::from_utf8_lossy(&out.stderr)))
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let p = dir.join("run.json");
    std::fs::write(&p, text).unwrap();
    p
}

fn json(p: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

const SMALL: &str = r#"{"simulate": {"n_stocks": 20, "n_days": 80}}"#;

fn small_panel(dir: &Path) -> PathBuf {
    let cfg = write_config(dir, SMALL);
    let sim = dir.join("sim");
    assert_eq!(code(&["simulate", "--config", s(&cfg), "--seed", "2", "--out", s(&sim)]), 0);
    sim
}

#[test]
fn simulate_refuses_overwrite_without_force() {
    let t = tempfile::tempdir().unwrap();
    let sim = small_panel(t.path());
    let before = std::fs::read(sim.join("metaorders.csv")).unwrap();
    let cfg = t.path().join("run.json");
    assert_eq!(code(&["simulate", "--config", s(&cfg), "--seed", "3", "--out", s(&sim)]), 1);
    assert_eq!(std::fs::read(sim.join("metaorders.csv")).unwrap(), before);
    assert_eq!(code(&["simulate", "--config", s(&cfg), "--seed", "3", "--out", s(&sim), "--force"]), 0);
    assert_ne!(std::fs::read(sim.join("metaorders.csv")).unwrap(), before);
}

#[test]
fn nested_output_directory_is_created() {
    let t = tempfile::tempdir().unwrap();
    let cfg = write_config(t.path(), SMALL);
    let out = t.path().join("a/b/c");
    assert_eq!(code(&["simulate", "--config", s(&cfg), "--out", s(&out)]), 0);
    assert!(out.join("ground_truth.json").exists());
    let report = json(&out.join("simulate.json"));
    assert_eq!(report["version"], env!("CARGO_PKG_VERSION"));
    assert_eq!(report["config"]["simulate"]["n_stocks"], 20);
    assert!(report["generated_at"].is_string());
}

#[test]
fn empty_metaorder_file_is_a_data_error() {
    let t = tempfile::tempdir().unwrap();
    let sim = small_panel(t.path());
    let text = std::fs::read_to_string(sim.join("metaorders.csv")).unwrap();
    std::fs::write(sim.join("metaorders.csv"), format!("{}\n", text.lines().next().unwrap())).unwrap();
    let out = t.path().join("est");
    assert_eq!(code(&["estimate", "--input", s(&sim), "--out", s(&out)]), 3);
    assert!(!out.join("estimate.json").exists());
}

#[test]
fn configuration_errors_exit_before_writing() {
    let t = tempfile::tempdir().unwrap();
    let sim = small_panel(t.path());
    let bad = t.path().join("bad.json");
    std::fs::write(&bad, r#"{"deconvolve": {"horizon": 500}}"#).unwrap();
    let out = t.path().join("dec");
    assert_eq!(code(&["deconvolve", "--config", s(&bad), "--input", s(&sim), "--out", s(&out)]), 2);
    assert!(!out.join("kernel.csv").exists());
    std::fs::write(&bad, r#"{"estimate": {"n_bin": 5}}"#).unwrap();
    assert_eq!(code(&["estimate", "--config", s(&bad), "--input", s(&sim), "--out", s(&out)]), 2);
    assert_eq!(code(&["estimate", "--out", s(&out)]), 2);
    assert_eq!(code(&["estimate", "--input", s(&sim), "--out", s(&out), "--threads", "0"]), 2);
    assert_eq!(code(&["estimate", "--input", s(&sim), "--out", s(&out), "--tranche", "huge"]), 2);
    assert_eq!(code(&["frobnicate"]), 2);
}

#[test]
fn estimate_rerun_matches_apart_from_timestamp() {
    let t = tempfile::tempdir().unwrap();
    let sim = small_panel(t.path());
    let (a, b) = (t.path().join("a"), t.path().join("b"));
    for out in [&a, &b] {
        assert!(matches!(code(&["estimate", "--input", s(&sim), "--out", s(out)]), 0 | 4));
    }
    let strip = |p: &Path| {
        let mut v = json(p);
        v.as_object_mut().unwrap().remove("generated_at");
        v.as_object_mut().unwrap().remove("input");
        v
    };
    assert_eq!(strip(&a.join("estimate.json")), strip(&b.join("estimate.json")));
    let counts = &json(&a.join("estimate.json"))["counts"];
    assert_eq!(counts["metaorders_in"], counts["metaorders_kept"]);
    let rej = std::fs::read_to_string(a.join("rejections.csv")).unwrap();
    assert!(rej.starts_with("filter,count\n") && rej.contains("eta_cap,0"));
}

#[test]
fn zero_replicates_omit_bands() {
    let t = tempfile::tempdir().unwrap();
    let sim = small_panel(t.path());
    let cfg = write_config(t.path(), r#"{"deconvolve": {"horizon": 5, "replicates": 0}}"#);
    let out = t.path().join("dec");
    assert!(matches!(code(&["deconvolve", "--config", s(&cfg), "--input", s(&sim), "--out", s(&out)]), 0 | 4));
    let kernel = std::fs::read_to_string(out.join("kernel.csv")).unwrap();
    let rows: Vec<&str> = kernel.lines().collect();
    assert_eq!(rows.len(), 7);
    assert!(rows[1..].iter().all(|r| r.ends_with(",,")), "{kernel}");
    assert!(json(&out.join("deconvolve.json"))["kernel"]["bands"].is_null());
}

#[test]
fn noiseless_explicit_kernel_is_recovered_through_the_cli() {
    let t = tempfile::tempdir().unwrap();
    let cfg = write_config(
        t.path(),
        r#"{
          "simulate": {"n_stocks": 20, "n_days": 100, "noise": 0, "market_vol": 0, "flow": {"a": 0},
                       "kernel": {"mode": "explicit", "lags": [0.4, -0.1, 0.05]}},
          "deconvolve": {"horizon": 4, "replicates": 0, "fixed_beta": 1}
        }"#,
    );
    let sim = t.path().join("sim");
    let out = t.path().join("dec");
    assert_eq!(code(&["simulate", "--config", s(&cfg), "--out", s(&sim)]), 0);
    assert!(matches!(code(&["deconvolve", "--config", s(&cfg), "--input", s(&sim), "--out", s(&out)]), 0 | 4));
    let truth = json(&sim.join("ground_truth.json"));
    let expected: Vec<f64> = truth["kernel_normalized"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).collect();
    let kernel = std::fs::read_to_string(out.join("kernel.csv")).unwrap();
    for (tau, line) in kernel.lines().skip(1).enumerate() {
        let g: f64 = line.split(',').nth(2).unwrap().parse().unwrap();
        let want = expected[tau.min(expected.len() - 1)];
        assert!((g - want).abs() < 1e-9, "tau {tau}: {g} vs {want}");
    }
}

#[test]
fn tranche_flag_restricts_stocks() {
    let t = tempfile::tempdir().unwrap();
    let sim = small_panel(t.path());
    let stocks = std::fs::read_to_string(sim.join("stocks.csv")).unwrap();
    let mid = stocks.lines().filter(|l| l.ends_with(",mid")).count();
    assert!(mid > 0 && mid < 20, "{stocks}");
    let out = t.path().join("est");
    assert!(matches!(code(&["estimate", "--input", s(&sim), "--out", s(&out), "--tranche", "mid"]), 0 | 4));
    let report = json(&out.join("estimate.json"));
    assert_eq!(report["counts"]["stocks"], mid);
    assert_eq!(report["tranche"], "mid");
}

#[test]
fn report_compares_against_ground_truth() {
    let t = tempfile::tempdir().unwrap();
    let sim = small_panel(t.path());
    let est = t.path().join("est");
    assert!(matches!(code(&["estimate", "--input", s(&sim), "--out", s(&est)]), 0 | 4));
    let rep = t.path().join("rep");
    assert_eq!(code(&["report", "--input", s(&sim), "--input", s(&est), "--out", s(&rep)]), 0);
    let summary = json(&rep.join("summary.json"));
    assert_eq!(summary["ground_truth"], true);
    let rows = summary["rows"].as_array().unwrap();
    let a = rows.iter().find(|r| r["quantity"] == "flow autocorrelation a").unwrap();
    assert_eq!(a["truth"], 0.24);
    let text = std::fs::read_to_string(rep.join("summary.txt")).unwrap();
    assert!(text.starts_with("quantity"));
    assert_eq!(code(&["report", "--input", s(t.path()), "--out", s(&t.path().join("none"))]), 3);
}
