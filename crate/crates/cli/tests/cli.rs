use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn gmcweld(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gmcweld"))
        .args(args)
        .arg("--out-dir")
        .arg(dir)
        .env("GMCWELD_THREADS", "1")
        .output()
        .expect("binary runs")
}

fn report(dir: &Path, name: &str) -> Value {
    serde_json::from_str(&std::fs::read_to_string(dir.join(name)).unwrap()).unwrap()
}

const SMALL_WELD: &[&str] = &[
    "weld",
    "--gamma",
    "0",
    "--grid-m",
    "1024",
    "--set",
    "beltrami.grid=128",
    "--set",
    "beltrami.n_list=1,4",
];

#[test]
fn flags_override_the_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    std::fs::write(&cfg, "# small run\ngamma = 0.1\ngrid_m = 256\ndepth = 3\nrho = 1/4\n").unwrap();
    let out = gmcweld(dir.path(), &["sample", "--config", cfg.to_str().unwrap(), "--gamma", "0.25"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v = report(dir.path(), "sample.json");
    let c = &v["meta"]["config"];
    assert_eq!(c["gamma"], 0.25);
    assert_eq!(c["grid_m"], 256);
    assert_eq!(c["rho"], 0.25);
    assert_eq!(c["seed"], 1);
    assert_eq!(c["beltrami"]["n_list"], serde_json::json!([1, 2, 4, 8, 16]));
    assert!(c.get("out_dir").is_none());
}

#[test]
fn bad_config_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = gmcweld(dir.path(), &["sample", "--gamma", "1.5"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("√2"));
    let out = gmcweld(dir.path(), &["sample", "--set", "nonsense=3"]);
    assert_eq!(out.status.code(), Some(2));
    let out = gmcweld(dir.path(), &["frobnicate"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn stage_failure_exits_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let out = gmcweld(dir.path(), &["weld", "--gamma", "0.5", "--grid-m", "1024", "--set", "beltrami.grid=64"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn zero_gamma_weld_draws_the_circle() {
    let dir = tempfile::tempdir().unwrap();
    let out = gmcweld(dir.path(), SMALL_WELD);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v = report(dir.path(), "weld.json");
    assert!(v["report"]["consistency_error"].as_f64().unwrap() < 1e-6);
    let svg = std::fs::read_to_string(dir.path().join("curve.svg")).unwrap();
    assert_eq!(svg.matches("<path").count(), 1);
    assert!(svg.contains("viewBox=\"-1.1 -1.1 2.2 2.2\""));
    let csv = std::fs::read_to_string(dir.path().join("curve.csv")).unwrap();
    assert!(csv.starts_with("# welding-curve v1\n# meta {"));
}

#[test]
fn reruns_are_byte_identical() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let args = ["covcheck", "--grid-m", "256", "--depth", "3", "--rho", "1/4", "--set", "covcheck.replicas=100"];
    for d in [&a, &b] {
        let out = gmcweld(d.path(), &args);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    for name in ["covcheck.json", "covcheck.csv"] {
        let read = |d: &tempfile::TempDir| std::fs::read(d.path().join(name)).unwrap();
        assert_eq!(read(&a), read(&b), "{name} differs");
    }
    let v = report(a.path(), "covcheck.json");
    assert!(!v["report"]["h"]["rows"].as_array().unwrap().is_empty());
}

#[test]
fn walk_writes_a_clean_trace() {
    let dir = tempfile::tempdir().unwrap();
    let out = gmcweld(
        dir.path(),
        &["walk", "--gamma", "0.5", "--set", "walk.N=20", "--set", "walk.steps=40", "--set", "walk.replicas=100"],
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v = report(dir.path(), "walk.json");
    assert_eq!(v["report"]["invariant_violations"], 0);
    let csv = std::fs::read_to_string(dir.path().join("walk_trace_0.csv")).unwrap();
    assert_eq!(csv.lines().nth(2), Some("m,Y,i,j,branch"));
}
