use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn agglab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_agglab")).args(args).output().unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p.to_string_lossy().into_owned()
}

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(p).unwrap()).unwrap()
}

const FLOW: &str = r#"{
  "kernel": {"dim": 3, "s": 1.0, "attraction": {"type": "quadratic", "K": 0.16666666666666666}},
  "method": "flow",
  "seed": 12,
  "flow": {"n": 150, "dt0": 0.5, "t_max": 10.0}
}"#;

#[test]
fn empty_config_exits_with_code_one_and_lists_errors() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "empty.json", "{}");
    let out = agglab(&["run", "--config", &cfg, "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("kernel") && err.contains("method"), "{err}");
}

#[test]
fn unknown_keys_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let text = FLOW.replacen("\"seed\": 12", "\"seed\": 12, \"sede\": 3", 1);
    let cfg = write(dir.path(), "typo.json", &text);
    let out = agglab(&["flow", "--config", &cfg, "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("sede"));
}

#[test]
fn runs_are_reproducible_across_thread_counts_and_from_the_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "flow.json", FLOW);
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    let c = dir.path().join("c");
    let run = |threads: &str, config: &str, out: &Path| {
        let o = agglab(&["--threads", threads, "run", "--config", config, "--out", out.to_str().unwrap()]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    };
    run("1", &cfg, &a);
    run("2", &cfg, &b);
    let manifest = a.join("manifest.json");
    run("1", manifest.to_str().unwrap(), &c);
    for f in ["cloud.csv", "trace.csv", "report.json", "manifest.json"] {
        let first = fs::read(a.join(f)).unwrap();
        assert_eq!(first, fs::read(b.join(f)).unwrap(), "{f} differs across thread counts");
        assert_eq!(first, fs::read(c.join(f)).unwrap(), "{f} differs on manifest rerun");
    }
    let m = read_json(&manifest);
    let digest = m["outputs"]["cloud.csv"].as_str().unwrap();
    assert_eq!(digest.len(), 64);
    assert_eq!(m["seed"], 12);
}

#[test]
fn seed_override_changes_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "flow.json", FLOW);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for (out, seed) in [(&a, "12"), (&b, "13")] {
        let o = agglab(&["flow", "--config", &cfg, "--out", out.to_str().unwrap(), "--seed", seed]);
        assert!(o.status.success());
    }
    assert_ne!(fs::read(a.join("cloud.csv")).unwrap(), fs::read(b.join("cloud.csv")).unwrap());
    assert_ne!(read_json(&a.join("manifest.json"))["config_sha256"], read_json(&b.join("manifest.json"))["config_sha256"]);
}

#[test]
fn obstacle_run_reports_a_passing_ball() {
    let dir = tempfile::tempdir().unwrap();
    let text = r#"{"kernel": {"dim": 3, "s": 1.0, "attraction": {"type": "quadratic", "K": 0.16666666666666666}},
                   "method": "obstacle", "grid": {"h": 0.002, "L": 2.0}}"#;
    let cfg = write(dir.path(), "ball.json", text);
    let out = dir.path().join("o");
    let o = agglab(&["obstacle", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let rep = read_json(&out.join("report.json"));
    assert_eq!(rep["passed"], true);
    let r = rep["report"]["contact_radius"].as_f64().unwrap();
    assert!((r - 0.6203504908994).abs() < 0.01);
}

#[test]
fn dist_energy_and_table_subcommands() {
    let dir = tempfile::tempdir().unwrap();
    let a = write(dir.path(), "a.csv", "x1,x2,weight\n0,0,0.5\n1,0,0.5\n");
    let b = write(dir.path(), "b.csv", "x1,x2,weight\n0,1,0.5\n1,1,0.5\n");
    let o = agglab(&["dist", "--a", &a, "--b", &b, "--p", "inf"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!((v["distance"].as_f64().unwrap() - 1.0).abs() < 1e-15);

    let kernel = write(
        dir.path(),
        "k.json",
        r#"{"dim": 2, "s": 0.5, "attraction": {"type": "quadratic", "K": 0.1875}}"#,
    );
    let o = agglab(&["energy", "--cloud", &a, "--kernel", &kernel]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!(v["total"].as_f64().unwrap().is_finite());

    let table = dir.path().join("t.csv");
    let o = agglab(&["kernels-table", "--kernel", &kernel, "--out", table.to_str().unwrap(), "--n", "20"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(fs::read_to_string(&table).unwrap().lines().count(), 21);
}
