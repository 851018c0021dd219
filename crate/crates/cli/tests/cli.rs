use std::path::Path;
use std::process::{Command, Output};

use pat_cli::config::RunConfig;
use pat_cli::fieldfile::FieldFile;
use pat_cli::{build_scenario, operator_config};
use pat_core::recon::project_nonnegative;
use pat_core::{ImagingOperator, PatOperators};
use serde_json::{json, Value};
use tempfile::TempDir;

fn pat(dir: &Path, config: &Value, args: &[&str], env: &[(&str, &str)]) -> Output {
    let cfg = dir.join("config.json");
    std::fs::write(&cfg, config.to_string()).unwrap();
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_pat"));
    cmd.arg("--config")
        .arg(&cfg)
        .arg("--out")
        .arg(dir.join("out"))
        .args(args);
    cmd.env_remove("PAT_FAULT_INJECTION");
    for (k, v) in env {
        cmd.env(k, v);
    }
    cmd.output().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn layered_config(extra: Value) -> Value {
    let mut base = json!({
        "scenario": {"kind": "layered", "n": 8, "pml": 4},
        "time": {"nt": 40},
        "precision": "f64",
        "seed": 11,
        "verify": {"trials": 20}
    });
    base.as_object_mut().unwrap().extend(extra.as_object().unwrap().clone());
    base
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn scenario_ii_data_shape_and_reruns_are_identical() {
    let config = json!({"scenario": {"kind": "II", "n": 128}, "seed": 3});
    let (a, b) = (TempDir::new().unwrap(), TempDir::new().unwrap());
    for d in [&a, &b] {
        let o = pat(d.path(), &config, &["simulate"], &[]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    let manifest = read_json(&a.path().join("out/manifest.json"));
    let nt = manifest["nt"].as_u64().unwrap();
    let data = FieldFile::read(&a.path().join("out/data.patf")).unwrap();
    assert_eq!(data.dims, vec![nt + 1, 50]);
    assert_eq!(
        std::fs::read(a.path().join("out/data.patf")).unwrap(),
        std::fs::read(b.path().join("out/data.patf")).unwrap()
    );
    assert_eq!(
        std::fs::read(a.path().join("out/p0.patf")).unwrap(),
        std::fs::read(b.path().join("out/p0.patf")).unwrap()
    );
}

#[test]
fn noiseless_data_is_the_library_forward_map() {
    let dir = TempDir::new().unwrap();
    let config = layered_config(json!({"noise_rel": 0.0}));
    let o = pat(dir.path(), &config, &["simulate"], &[]);
    assert!(o.status.success(), "{}", stderr(&o));
    let cfg = RunConfig::from_json(&config.to_string()).unwrap();
    let s = build_scenario(&cfg).unwrap();
    let ops = PatOperators::<f64>::new(operator_config(&cfg, &s).unwrap()).unwrap();
    let data = FieldFile::read(&dir.path().join("out/data.patf")).unwrap();
    assert_eq!(data.data.to_f64(), ops.forward(&s.p0).unwrap());
}

#[test]
fn verify_passes_and_detects_a_sign_fault() {
    let dir = TempDir::new().unwrap();
    let config = layered_config(json!({}));
    let o = pat(dir.path(), &config, &["verify"], &[]);
    assert!(o.status.success(), "{}", stderr(&o));
    let report = read_json(&dir.path().join("out/verify_report.json"));
    assert_eq!(report["seed"], 11);
    assert_eq!(report["precision"], "f64");
    assert_eq!(report["passed"], true);
    assert!(report["dense"]["relative_error"].as_f64().unwrap() <= 1e-3);
    assert_eq!(report["fault_injection"], Value::Null);

    let o = pat(
        dir.path(),
        &config,
        &["verify"],
        &[("PAT_FAULT_INJECTION", "adjoint_sign")],
    );
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    let report = read_json(&dir.path().join("out/verify_report.json"));
    assert_eq!(report["passed"], false);
    assert_eq!(report["fault_injection"], "adjoint_sign");
}

#[test]
fn malformed_input_exits_with_usage_code() {
    let dir = TempDir::new().unwrap();
    let o = pat(dir.path(), &layered_config(json!({"bogus_key": 1})), &["simulate"], &[]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("bogus_key"));
    let o = pat(dir.path(), &json!({"time": {"dt": 1e-7}}), &["simulate"], &[]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("time.dt"));
    let o = pat(
        dir.path(),
        &layered_config(json!({})),
        &["simulate", "--no-such-flag"],
        &[],
    );
    assert_eq!(o.status.code(), Some(1));
    let o = pat(dir.path(), &layered_config(json!({})), &["reconstruct"], &[]);
    assert_eq!(o.status.code(), Some(1), "missing data file");
}

#[test]
fn reconstruct_writes_images_and_iteration_log() {
    let dir = TempDir::new().unwrap();
    let config = layered_config(json!({"method": {"name": "LS+", "iterations": 5}}));
    assert!(pat(dir.path(), &config, &["simulate"], &[]).status.success());
    let o = pat(dir.path(), &config, &["reconstruct"], &[]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = dir.path().join("out");
    let mut rows = csv::Reader::from_path(out.join("log.csv")).unwrap();
    assert_eq!(rows.records().count(), 5);
    assert!(out.join("image.png").exists());
    assert!(out.join("theta.json").exists());
    let summary = read_json(&out.join("recon.json"));
    assert_eq!(summary["method"], "LS+");
    assert!(summary["psnr"].as_f64().unwrap().is_finite());

    let o = pat(dir.path(), &config, &["reconstruct", "--method", "BP"], &[]);
    assert!(o.status.success(), "{}", stderr(&o));
    let cfg = RunConfig::from_json(&config.to_string()).unwrap();
    let s = build_scenario(&cfg).unwrap();
    let ops = PatOperators::<f64>::new(operator_config(&cfg, &s).unwrap()).unwrap();
    let data = FieldFile::read(&out.join("data.patf")).unwrap().data.to_f64();
    let mut expect = ops.adjoint(&data).unwrap();
    project_nonnegative(&mut expect);
    assert_eq!(FieldFile::read(&out.join("image.patf")).unwrap().data.to_f64(), expect);

    let o = Command::new(env!("CARGO_BIN_EXE_pat"))
        .arg("psnr")
        .arg(out.join("p0.patf"))
        .arg(out.join("image.patf"))
        .output()
        .unwrap();
    assert!(o.status.success());
    let v: f64 = String::from_utf8_lossy(&o.stdout).trim().parse().unwrap();
    assert!(v.is_finite() && v > 0.0);
}
