use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn rydpump(dir: &Path, config: &str, args: &[&str]) -> Output {
    let cfg = dir.join("config.toml");
    fs::write(&cfg, config).unwrap();
    Command::new(env!("CARGO_BIN_EXE_rydpump"))
        .arg("--config")
        .arg(&cfg)
        .arg("--out")
        .arg(dir.join("out"))
        .args(args)
        .output()
        .unwrap()
}

fn summary(dir: &Path, command: &str) -> Value {
    let text = fs::read_to_string(dir.join("out").join(format!("{command}.json"))).unwrap();
    serde_json::from_str(&text).unwrap()
}

#[test]
fn kernel_check_chain_of_four() {
    let tmp = TempDir::new().unwrap();
    let out = rydpump(tmp.path(), "[protocol]\nstate = { kind = \"chain\", n = 4 }\n", &["protocol", "kernel-check"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let s = &summary(tmp.path(), "kernel-check")["summary"];
    assert_eq!(s["rank"], 15);
    assert_eq!(s["kernel_dim"], 1);
    assert_eq!(s["unique"], true);
}

#[test]
fn validation_errors_exit_2() {
    let tmp = TempDir::new().unwrap();
    let out = rydpump(tmp.path(), "[spectrum]\npoints = 0\n", &["spectrum"]);
    assert_eq!(out.status.code(), Some(2));
    let out = rydpump(tmp.path(), "[spectrum]\nratios = []\n", &["spectrum"]);
    assert_eq!(out.status.code(), Some(2));
    let out = rydpump(tmp.path(), "[system]\nspacing = 3.0\n", &["spectrum"]);
    assert_eq!(out.status.code(), Some(2));
    let out = rydpump(tmp.path(), "[protocol]\nstate = { kind = \"tshape\" }\n", &["protocol", "cluster"]);
    assert_eq!(out.status.code(), Some(2));
    let out = rydpump(tmp.path(), "", &["--engine", "exact", "protocol", "purify"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn bell_tables_are_bit_stable() {
    let a = TempDir::new().unwrap();
    let b = TempDir::new().unwrap();
    let cfg = "seed = 7\n";
    for dir in [&a, &b] {
        let out = rydpump(dir.path(), cfg, &["protocol", "bell"]);
        assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    }
    let ta = fs::read(a.path().join("out/bell.csv")).unwrap();
    let tb = fs::read(b.path().join("out/bell.csv")).unwrap();
    assert_eq!(ta, tb);
    let text = String::from_utf8(ta).unwrap();
    let first = text.lines().next().unwrap();
    assert!(first.starts_with("# rydpump ") && first.contains("config_sha256=") && first.contains("seed=7"));
    let f = summary(a.path(), "bell")["summary"]["final_fidelity"].as_f64().unwrap();
    assert!((f - 0.9966).abs() < 0.005, "{f}");
}

#[test]
fn short_bell_run_is_censored() {
    let tmp = TempDir::new().unwrap();
    let out = rydpump(tmp.path(), "[protocol]\ncycles = 1\n", &["protocol", "bell"]);
    assert_eq!(out.status.code(), Some(4));
    assert!(tmp.path().join("out/bell.csv").exists());
    assert_eq!(summary(tmp.path(), "bell")["summary"]["convergence"]["status"], "censored");
}

#[test]
fn noise_is_deterministic_per_seed() {
    let cfg = "[protocol]\ncycles = 2\ntarget_fidelity = 0.5\n";
    let run = |seed: &str| {
        let tmp = TempDir::new().unwrap();
        let out = rydpump(tmp.path(), cfg, &["--seed", seed, "--samples", "3", "protocol", "noise"]);
        assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
        let p = tmp.path().join("out");
        (fs::read(p.join("noise.csv")).unwrap(), fs::read(p.join("noise_samples.csv")).unwrap())
    };
    let a = run("11");
    assert_eq!(a, run("11"));
    assert_ne!(a.1, run("12").1);
}

#[test]
fn liouvillian_flags_exceptional_point() {
    let tmp = TempDir::new().unwrap();
    let out = rydpump(tmp.path(), "[liouvillian]\nratios = [0.1, 0.5, 50.0]\n", &["liouvillian"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let s = &summary(tmp.path(), "liouvillian")["summary"];
    assert_eq!(s["exceptional_points"], serde_json::json!([0.5]));
    assert!(s["max_eigenvalue_mismatch"].as_f64().unwrap() < 1e-9);
    let gaps = fs::read_to_string(tmp.path().join("out/liouvillian_gaps.csv")).unwrap();
    assert!(gaps.lines().any(|l| l.starts_with("0.5,critical,")));
}

#[test]
fn two_atom_spectrum_has_crossing_near_k() {
    let tmp = TempDir::new().unwrap();
    let out = rydpump(tmp.path(), "[spectrum]\nstart = 14.0\nstop = 15.0\npoints = 11\n", &["spectrum"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let s = &summary(tmp.path(), "spectrum")["summary"];
    let found: Vec<f64> = s["crossings"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).collect();
    assert!(found.iter().any(|r| (r - 14.6).abs() < 0.1), "{found:?}");
}
