use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use skt_core::io::{read_snapshot, RunManifest};

const MINIMAL: &str = r#"{
  "n": 2,
  "a0": [1.0, 1.0],
  "a": [[0.1, 0.2], [0.2, 0.1]],
  "grid": {"dim": 1, "N": 16},
  "T": 0.01,
  "dt": 0.001,
  "noise": {"family": "bounded_ratio", "eta": 0.5}
}"#;

fn sktlab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sktlab")).args(args).output().expect("binary runs")
}

fn write_config(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

fn run_ok(args: &[&str]) {
    let out = sktlab(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
}

fn manifest(dir: &Path) -> RunManifest {
    serde_json::from_str(&fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap()
}

fn error_json(out: &Output) -> Value {
    serde_json::from_slice(&out.stderr).expect("stderr is a JSON object")
}

#[test]
fn simulate_writes_verifiable_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "c.json", MINIMAL);
    let out = tmp.path().join("run");
    run_ok(&["simulate", "--config", cfg.to_str().unwrap(), "--seed", "4", "--out", out.to_str().unwrap()]);

    let ts = fs::read_to_string(out.join("timeseries.csv")).unwrap();
    assert_eq!(ts.lines().count(), 1 + 11);
    assert!(ts.lines().next().unwrap().starts_with("t,"));

    let m = manifest(&out);
    assert_eq!(m.command, "simulate");
    assert_eq!(m.seed, 4);
    assert_eq!(m.config_hash.len(), 64);
    assert!(m.outputs.iter().any(|o| o.file == "timeseries.csv"));
    assert!(m.verify(&out).unwrap().is_empty());

    let first = m.outputs.iter().find(|o| o.file.starts_with("snapshots/") && o.file.ends_with(".json")).unwrap();
    let snap = read_snapshot(&out.join(&first.file)).unwrap();
    assert_eq!(snap.grid.nx(), 16);
    assert_eq!(snap.field.n_species(), 2);
    assert!(snap.field.values().iter().all(|u| *u > 0.0));

    fs::write(out.join("timeseries.csv"), "tampered").unwrap();
    assert_eq!(m.verify(&out).unwrap(), vec!["timeseries.csv".to_string()]);
}

#[test]
fn ensemble_is_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "c.json", MINIMAL);
    let dirs: Vec<PathBuf> = (0..2).map(|k| tmp.path().join(format!("e{k}"))).collect();
    for d in &dirs {
        run_ok(&["ensemble", "--config", cfg.to_str().unwrap(), "--seed", "9", "--paths", "6", "--out", d.to_str().unwrap()]);
    }
    for f in ["paths.csv", "aggregate.csv"] {
        assert_eq!(fs::read(dirs[0].join(f)).unwrap(), fs::read(dirs[1].join(f)).unwrap(), "{f}");
    }
    let (a, b) = (manifest(&dirs[0]), manifest(&dirs[1]));
    assert_eq!(a.outputs, b.outputs);
    assert_eq!(a.config_hash, b.config_hash);
    assert_eq!(a.paths, Some(6));
    assert_eq!(fs::read_to_string(dirs[0].join("paths.csv")).unwrap().lines().count(), 7);

    let other = tmp.path().join("other");
    run_ok(&["ensemble", "--config", cfg.to_str().unwrap(), "--seed", "10", "--paths", "6", "--out", other.to_str().unwrap()]);
    assert_ne!(fs::read(dirs[0].join("paths.csv")).unwrap(), fs::read(other.join("paths.csv")).unwrap());
}

#[test]
fn cyclic_coefficients_exit_with_validation_code() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        "cyclic.json",
        r#"{"n": 3, "a0": [1, 1, 1], "a": [[0.5, 1, 2], [2, 0.5, 1], [1, 2, 0.5]],
            "grid": {"dim": 1, "N": 8}, "T": 0.01, "dt": 0.001, "noise": {"family": "zero"}}"#,
    );
    let out = sktlab(&["check-structure", "--config", cfg.to_str().unwrap(), "--out", tmp.path().join("o").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let e = error_json(&out);
    assert_eq!(e["error"], "CycleInconsistent");
    assert_eq!(e["exit_code"], 2);
}

#[test]
fn config_errors_name_the_offending_key() {
    let tmp = tempfile::tempdir().unwrap();
    let o = tmp.path().join("o");
    let typo = write_config(tmp.path(), "typo.json", &MINIMAL.replace("\"eta\": 0.5", "\"eta\": \"half\""));
    let out = sktlab(&["simulate", "--config", typo.to_str().unwrap(), "--out", o.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let e = error_json(&out);
    assert_eq!(e["error"], "Config");
    assert!(e["message"].as_str().unwrap().contains("noise.eta"), "{e}");

    let range = write_config(tmp.path(), "range.json", &MINIMAL.replace("\"eta\": 0.5", "\"eta\": -0.5"));
    let out = sktlab(&["simulate", "--config", range.to_str().unwrap(), "--out", o.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_json(&out)["error"], "InvalidParameters");

    let missing = sktlab(&["simulate", "--config", "/nonexistent/c.json", "--out", tmp.path().join("o").to_str().unwrap()]);
    assert_eq!(missing.status.code(), Some(1));
    assert_eq!(error_json(&missing)["error"], "Io");
}

#[test]
fn structure_report_and_studies() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "c.json", MINIMAL);
    let c = cfg.to_str().unwrap();

    let s = tmp.path().join("s");
    run_ok(&["check-structure", "--config", c, "--out", s.to_str().unwrap()]);
    let rep: Value = serde_json::from_str(&fs::read_to_string(s.join("structure.json")).unwrap()).unwrap();
    assert_eq!(rep["detailed_balance_residual"], 0.0);
    assert!(rep["noise"]["tail_fraction"].as_f64().unwrap() <= 0.01);
    assert!(rep["a5"]["ratio1_max"].as_f64().unwrap().is_finite());

    let e = tmp.path().join("eps");
    run_ok(&["eps-study", "--config", c, "--eps-list", "1e-1,1e-2", "--out", e.to_str().unwrap()]);
    let table = fs::read_to_string(e.join("eps_study.csv")).unwrap();
    assert_eq!(table.lines().count(), 3);
    assert_eq!(manifest(&e).config["eps_list"], serde_json::json!([0.1, 0.01]));
    let bad = sktlab(&["eps-study", "--config", c, "--eps-list", "1e-3,1e-1", "--out", e.to_str().unwrap()]);
    assert_eq!(bad.status.code(), Some(2));

    let r = tmp.path().join("report");
    run_ok(&["entropy-report", "--config", c, "--out", r.to_str().unwrap()]);
    let bal = fs::read_to_string(r.join("entropy_balance.csv")).unwrap();
    assert_eq!(bal.lines().count(), 1 + 10);
    assert_eq!(manifest(&r).config["save_every"], 1);
}
