//! End-to-end runs of the `oseen` binary.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_oseen")
}

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("oseen-cli-{}-{name}", std::process::id()));
    let _ = fs::remove_dir_all(&dir);
    fs::create_dir_all(&dir).unwrap();
    dir
}

fn run(args: &[&str]) -> Output {
    Command::new(bin()).args(args).output().expect("binary runs")
}

fn json(path: &Path) -> Value {
    serde_json::from_slice(&fs::read(path).unwrap()).unwrap()
}

fn no_temporaries(dir: &Path) {
    for e in fs::read_dir(dir).unwrap() {
        let name = e.unwrap().file_name().into_string().unwrap();
        assert!(!name.ends_with(".tmp"), "leftover {name}");
    }
}

#[test]
fn empty_beta_list_is_a_config_error() {
    let dir = scratch("malformed");
    let cfg = dir.join("bad.toml");
    fs::write(&cfg, "betas = []\n").unwrap();
    let out = dir.join("out");
    let o = run(&["spectrum", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let err: Value = serde_json::from_slice(&o.stderr).unwrap();
    assert_eq!(err["status"], "error");
    assert_eq!(err["kind"], "config");
    assert!(err["message"].as_str().unwrap().contains("betas"));
}

#[test]
fn unknown_key_and_large_beta_are_rejected() {
    let dir = scratch("unknown");
    for body in ["nonsense = 3\n", "betas = [1e7]\n"] {
        let cfg = dir.join("bad.toml");
        fs::write(&cfg, body).unwrap();
        let o = run(&["sigma", "--config", cfg.to_str().unwrap(), "--out", dir.join("o").to_str().unwrap()]);
        assert_eq!(o.status.code(), Some(2));
        let err: Value = serde_json::from_slice(&o.stderr).unwrap();
        assert_eq!(err["kind"], "config");
    }
}

#[test]
fn runtime_failure_writes_error_json() {
    let dir = scratch("runtime");
    let cfg = dir.join("c.toml");
    // Three alphas cannot span a relaxation fit.
    fs::write(&cfg, "alphas = [100.0, 200.0, 300.0]\n[grid]\nn_points = 48\n[evolve]\nn_theta = 4\n").unwrap();
    let out = dir.join("out");
    let o = run(&["sweep-relax", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    let err = json(&out.join("error.json"));
    assert_eq!(err["kind"], "runtime");
    assert!(!out.join("manifest.json").exists());
}

#[test]
fn spectrum_outputs_are_reproducible_and_manifested() {
    let dir = scratch("spectrum");
    let cfg = dir.join("c.toml");
    fs::write(&cfg, "modes = [0, 2]\nbetas = [0.0, 100.0]\n[grid]\nn_points = 40\nr_max = 20.0\n").unwrap();
    let mut outs = Vec::new();
    for (k, workers) in ["1", "2"].iter().enumerate() {
        let out = dir.join(format!("out{k}"));
        let o = run(&["spectrum", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "--workers", workers]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        no_temporaries(&out);
        outs.push(out);
    }
    for file in ["spectrum.csv", "spectrum.dat", "summary.json"] {
        assert_eq!(fs::read(outs[0].join(file)).unwrap(), fs::read(outs[1].join(file)).unwrap(), "{file} differs");
    }
    let csv = fs::read_to_string(outs[0].join("spectrum.csv")).unwrap();
    assert!(csv.starts_with("n,beta,k,re,im,residual,trusted\n"));
    let m = json(&outs[0].join("manifest.json"));
    assert_eq!(m["seed"], 20_240_517);
    assert_eq!(m["config"]["betas"], serde_json::json!([0.0, 100.0]));
    assert_eq!(m["config"]["grid"]["n_points"], 40);
    assert_eq!(m["versions"]["oseen"], env!("CARGO_PKG_VERSION"));
    assert_eq!(m["config_sha256"].as_str().unwrap().len(), 64);
    for key in ["config", "versions", "grid_report", "timing"] {
        assert!(m.get(key).is_some(), "manifest lacks {key}");
    }
    // Defaults absent from the file are echoed.
    assert_eq!(m["config"]["tau_max"], 40.0);
}

#[test]
fn seed_flag_is_recorded_and_resolution_check_reports() {
    let dir = scratch("seed");
    let cfg = dir.join("c.toml");
    fs::write(&cfg, "modes = [2]\nbetas = [10.0]\n[grid]\nn_points = 32\nr_max = 20.0\n").unwrap();
    let out = dir.join("out");
    let o = run(&[
        "spectrum",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--seed",
        "7",
        "--resolution-check",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let m = json(&out.join("manifest.json"));
    assert_eq!(m["seed"], 7);
    let rc = &m["grid_report"]["resolution_check"];
    assert_eq!(rc["doubled_n_points"], 64);
    assert!(rc["max_relative_change"].as_f64().unwrap() < 1e-6);
}

#[test]
fn short_evolution_writes_trajectory() {
    let dir = scratch("evolve");
    let cfg = dir.join("c.toml");
    fs::write(
        &cfg,
        "[grid]\nn_points = 64\n[evolve]\nalpha = 50.0\nt_final = 0.2\nn_theta = 4\nsample_interval = 0.1\n",
    )
    .unwrap();
    let out = dir.join("out");
    let o = run(&["evolve", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(out.join("trajectory.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("tau,norm_r,norm_perp,M,E,carlen_loss_ratio"));
    assert_eq!(lines.count(), 3);
    let s = json(&out.join("summary.json"));
    assert!(s["summary"]["final"]["norm_perp"].as_f64().unwrap() > 0.0);
    assert!(out.join("manifest.json").exists());
}
