use std::collections::HashMap;
use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use netzero_core::Config;
use netzero_core::ode::SimulationTrace;

fn netzero(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_netzero"))
        .args(args)
        .arg("--out")
        .arg(out)
        .output()
        .expect("binary runs")
}

fn summary(out: &Path) -> HashMap<String, String> {
    fs::read_to_string(out.join("summary.txt"))
        .expect("summary written")
        .lines()
        .filter_map(|l| l.split_once('='))
        .map(|(k, v)| (k.to_owned(), v.to_owned()))
        .collect()
}

fn number(s: &HashMap<String, String>, key: &str) -> f64 {
    s[key].parse().unwrap_or_else(|_| panic!("{key} is not numeric: {}", s[key]))
}

#[test]
fn short_horizon_exits_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    let out = netzero(dir.path(), &["digester-sim", "--t-max", "1.0"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("T_max"));
}

#[test]
fn digester_sim_writes_trace_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let out = netzero(dir.path(), &["digester-sim", "--preset", "2", "--t-max", "3.5"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let s = summary(dir.path());
    assert_eq!(s["settled_before_t_max"], "true");
    assert!(number(&s, "settle_time") <= 3.5);
    let trace = SimulationTrace::load(&dir.path().join("digester_trace.csv"), 6).unwrap();
    assert_eq!(*trace.times.last().unwrap(), 3.5);
    for c in ["m12", "u1", "u6", "V", "J"] {
        assert!(trace.column(c).is_some(), "missing column {c}");
    }
    let cfg = Config::load(&dir.path().join("manifest.toml"), &[] as &[&str]).unwrap();
    assert_eq!(cfg.controller.preset, "2");
    assert_eq!(cfg.controller.t_max, 3.5);
}

#[test]
fn volume_balances_reference_flows() {
    let dir = tempfile::tempdir().unwrap();
    let out = netzero(dir.path(), &["volume", "--m12", "175", "--m23", "0.28"]);
    assert!(out.status.success());
    let s = summary(dir.path());
    assert!((number(&s, "compensation_volume") - 625.0).abs() < 1e-9);
    assert!(number(&s, "lambda_b").abs() < 1e-6);
    assert_eq!(number(&s, "lambda_a"), -175.0);
    assert!(String::from_utf8_lossy(&out.stdout).contains("compensation_volume="));
}

#[test]
fn volume_without_uptake_fails() {
    let dir = tempfile::tempdir().unwrap();
    let out = netzero(dir.path(), &["volume", "--m12", "175", "--m23", "0"]);
    assert!(!out.status.success());
}

#[test]
fn circularity_clamps_negative_flow() {
    let dir = tempfile::tempdir().unwrap();
    let out = netzero(dir.path(), &["circularity", "--net-flow", "-3", "--clamp"]);
    assert!(out.status.success());
    assert_eq!(number(&summary(dir.path()), "lambda"), 0.0);
    let out = netzero(dir.path(), &["circularity", "--net-flow", "4", "--delta", "2"]);
    assert!(out.status.success());
    assert_eq!(number(&summary(dir.path()), "lambda"), -8.0);
}

#[test]
fn validate_passes_on_reference() {
    let dir = tempfile::tempdir().unwrap();
    let out = netzero(dir.path(), &["validate"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(summary(dir.path())["all_passed"], "true");
}

#[test]
fn negative_half_saturation_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let out = netzero(dir.path(), &["validate", "--override", "digester.k_s1=-1"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("k_s1"));
}

#[test]
fn coarse_step_reports_oracle_mismatch() {
    let dir = tempfile::tempdir().unwrap();
    let out = netzero(dir.path(), &["validate", "--override", "integrator.dt=0.05"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("FAIL monod_oracle_match"));
    let s = summary(dir.path());
    assert_eq!(s["monod_oracle_match_passed"], "false");
    assert!(number(&s, "monod_oracle_match_measured") > number(&s, "monod_oracle_match_threshold"));
}

#[test]
fn zero_step_training_flags_undefined_delta() {
    let dir = tempfile::tempdir().unwrap();
    let out = netzero(dir.path(), &["ars-train", "--steps", "0"]);
    assert!(out.status.success());
    let s = summary(dir.path());
    assert_eq!(s["median_delta"], "undefined");
    assert_eq!(s["delta_defined"], "false");
    assert!(dir.path().join("policy_seed0.txt").exists());
}

#[test]
fn training_is_reproducible_and_policy_evaluates() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let args = ["ars-train", "--steps", "5000", "--seeds", "2", "--seed", "11"];
    assert!(netzero(a.path(), &args).status.success());
    assert!(netzero(b.path(), &args).status.success());
    for f in ["curve_seed11.csv", "curve_seed12.csv", "policy_seed11.txt", "summary.txt"] {
        assert_eq!(
            fs::read(a.path().join(f)).unwrap(),
            fs::read(b.path().join(f)).unwrap(),
            "{f} differs"
        );
    }
    let policy = a.path().join("policy_seed11.txt");
    let out = netzero(b.path(), &["policy-eval", "--policy", policy.to_str().unwrap(), "--episodes", "3"]);
    assert!(out.status.success());
    let s = summary(b.path());
    assert!(number(&s, "policy_mean_return").is_finite());
    assert!(number(&s, "optimal_constant_mean_return") > 0.0);
}

#[test]
fn network_sim_reports_volume_ratio() {
    let dir = tempfile::tempdir().unwrap();
    let out = netzero(dir.path(), &["network-sim"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let s = summary(dir.path());
    assert!((number(&s, "volume_ratio") / 625.0 - 1.0).abs() <= 0.05);
    assert!(number(&s, "uptake_orders_below_emissions") >= 2.5);
    let trace = SimulationTrace::load(&dir.path().join("network_trace.csv"), 3).unwrap();
    assert!(trace.column("dm2_dt").is_some());
}

#[test]
fn missing_config_file_fails() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.toml");
    let out = netzero(dir.path(), &["validate", "--config", missing.to_str().unwrap()]);
    assert!(!out.status.success());
}
