use std::path::Path;
use std::process::{Command, Output};

use rf_equiv::KernelSet;
use serde_json::Value;

const TOY: &str = r#"{"n_train":2,"n_test":1,"samples":0,"K_aa":[[1,0],[0,1]],"K_ah":[[0],[0]],"K_ha":[[0,0]],"K_hh":[[1]]}"#;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rf-equiv")).args(args).output().unwrap()
}

fn stdout_json(out: &Output) -> Value {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).unwrap()
}

struct Toy {
    dir: tempfile::TempDir,
}

impl Toy {
    fn new(c: f64) -> Self {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("k.json"), TOY).unwrap();
        std::fs::write(dir.path().join("y.csv"), "1\n0\n").unwrap();
        std::fs::write(dir.path().join("yhat.csv"), format!("{c}\n")).unwrap();
        Self { dir }
    }

    fn path(&self, name: &str) -> String {
        self.dir.path().join(name).display().to_string()
    }

    fn args<'a>(&'a self, owned: &'a mut Vec<String>) -> Vec<&'a str> {
        owned.extend([
            "--kernels".into(),
            self.path("k.json"),
            "--y".into(),
            self.path("y.csv"),
            "--yhat".into(),
            self.path("yhat.csv"),
        ]);
        owned.iter().map(String::as_str).collect()
    }
}

fn with_toy(toy: &Toy, cmd: &[&str]) -> Output {
    let mut owned = Vec::new();
    let mut args: Vec<&str> = cmd.to_vec();
    args.extend(toy.args(&mut owned));
    run(&args)
}

#[test]
fn toy_compare_prediction() {
    let toy = Toy::new(0.5);
    let v = stdout_json(&with_toy(&toy, &["compare", "--d", "2", "--delta", "1", "--reps", "50"]));
    let predicted = v["predicted"].as_f64().unwrap();
    assert!((predicted - (1.0 / 6.0 + 0.25)).abs() < 1e-9, "{predicted}");
    assert!((v["alpha"].as_f64().unwrap() + 0.5).abs() < 1e-9);
    assert_eq!(v["reps"], 50);
    assert!(v["empirical_mean"].as_f64().unwrap() > 0.0);
}

#[test]
fn predict_reports_alpha_in_range() {
    let toy = Toy::new(0.0);
    let v = stdout_json(&with_toy(&toy, &["predict", "--d", "3", "--delta", "0.2"]));
    let alpha = v["alpha"].as_f64().unwrap();
    assert!((-1.0..0.0).contains(&alpha));
    assert!(v["predicted_error"].as_f64().unwrap() >= 0.0);
}

#[test]
fn predict_on_synthetic_data() {
    let v = stdout_json(&run(&["predict", "--synthetic", "8,4,3", "--d", "5", "--delta", "0.1", "--samples", "2000"]));
    assert!(v["effective_ridge"].as_f64().unwrap() >= 0.1);
}

#[test]
fn sweep_grid_is_sorted() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("sweep.csv");
    let o = run(&[
        "sweep", "--synthetic", "8,4,3", "--samples", "2000", "--reps", "3",
        "--d-list", "12,3,6", "--delta-list", "1,0.01,0.1",
        "--out", out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(&out).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "d,delta,predicted,empirical_mean,rel_gap");
    let keys: Vec<(usize, f64)> = lines
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            (f[0].parse().unwrap(), f[1].parse().unwrap())
        })
        .collect();
    assert_eq!(keys.len(), 9);
    assert!(keys.windows(2).all(|w| w[0].0 < w[1].0 || (w[0].0 == w[1].0 && w[0].1 < w[1].1)));
}

#[test]
fn outputs_are_byte_identical_across_runs() {
    let args = ["simulate", "--synthetic", "10,5,4", "--d", "6", "--delta", "0.1", "--reps", "4", "--samples", "2000", "--seed", "3"];
    let a = run(&args);
    let b = run(&args);
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout);
    let one = Command::new(env!("CARGO_BIN_EXE_rf-equiv")).args(args).env("RF_EQUIV_THREADS", "1").output().unwrap();
    assert_eq!(a.stdout, one.stdout);
}

#[test]
fn estimated_kernels_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let k = dir.path().join("k.json");
    let prefix = format!("{}/raw_", dir.path().display());
    let o = run(&[
        "estimate-kernels", "--synthetic", "6,3,4", "--sigma", "sign", "--samples", "1500",
        "--out", k.to_str().unwrap(), "--raw-prefix", &prefix,
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let ks = KernelSet::load(&k).unwrap();
    assert_eq!((ks.n_train(), ks.n_test(), ks.samples), (6, 3, 1500));
    assert!(Path::new(&format!("{prefix}K_hh.bin")).exists());

    let v = stdout_json(&run(&[
        "predict", "--synthetic", "6,3,4", "--sigma", "sign", "--kernels", k.to_str().unwrap(), "--d", "4", "--delta", "0.5",
    ]));
    assert!(v["predicted_error"].as_f64().unwrap().is_finite());
}

#[test]
fn diagnose_reports_every_section() {
    let v = stdout_json(&run(&[
        "diagnose", "--synthetic", "5,3,4", "--samples", "2000", "--d", "4", "--delta", "0.5", "--reps", "4",
    ]));
    assert_eq!(v["ell"], 5 + 4 + 2 * 3);
    assert!(v["delta_gaussianity"]["std_error"].as_f64().unwrap() >= 0.0);
    assert_eq!(v["anisotropic_gap"]["samples"].as_array().unwrap().len(), 4);
    assert_eq!(v["zeroth_moment"]["rows"].as_array().unwrap().len(), 3);
    assert!(v["zeroth_moment"]["slope"].as_f64().unwrap() < -0.9);
    assert!(v["centering_score"].as_f64().unwrap() < 0.2);

    let o = run(&["diagnose", "--synthetic", "5,3,4", "--samples", "2000", "--d", "4", "--delta", "0.5", "--max-ell", "10"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn usage_errors_exit_with_two() {
    assert_eq!(run(&["predict", "--bogus"]).status.code(), Some(2));
    let toy = Toy::new(0.0);
    let dir = tempfile::tempdir().unwrap();
    let report = dir.path().join("fail.json");
    let o = with_toy(&toy, &["predict", "--d", "2", "--delta", "-1", "--out", report.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let v: Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(v["status"], "failure");
    assert_eq!(v["failure"], "InvalidArgument");
    assert_eq!(v["exit_code"], 2);
    assert!(String::from_utf8_lossy(&o.stderr).starts_with("error [InvalidArgument]"));

    let o = Command::new(env!("CARGO_BIN_EXE_rf-equiv"))
        .args(["predict", "--synthetic", "4,2,2", "--d", "2", "--delta", "1"])
        .env("RF_EQUIV_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn input_errors_exit_with_three() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("absent.json");
    let o = run(&["predict", "--kernels", missing.to_str().unwrap(), "--synthetic", "2,1,2", "--d", "2", "--delta", "1"]);
    assert_eq!(o.status.code(), Some(3));

    let bad = dir.path().join("bad.csv");
    std::fs::write(&bad, "1,2\n3\n").unwrap();
    let toy = Toy::new(0.0);
    let o = run(&[
        "predict", "--kernels", &toy.path("k.json"), "--y", bad.to_str().unwrap(), "--yhat", &toy.path("yhat.csv"),
        "--d", "2", "--delta", "1",
    ]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn solver_failures_exit_with_four() {
    // d = n_train with a vanishing ridge sits at the interpolation threshold
    let toy = Toy::new(0.5);
    let dir = tempfile::tempdir().unwrap();
    let report = dir.path().join("fail.json");
    let o = with_toy(&toy, &["predict", "--d", "2", "--delta", "1e-12", "--out", report.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(4));
    let v: Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(v["exit_code"], 4);
}
