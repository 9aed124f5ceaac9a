use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn bin(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nnpoisson"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

const TINY: &str = "\
preset = 2d-linear
topology = 2,8,8,1
n_test = 200

[phase]
order = 3
delta0 = 2e-4
interval = 6, 3, reset
interval = 4, 2
";

fn write_tiny(dir: &Path) -> String {
    let p = dir.join("tiny.cfg");
    fs::write(&p, TINY).unwrap();
    p.to_str().unwrap().to_string()
}

#[test]
fn presets_lists_every_builtin() {
    let o = bin(&["presets"]);
    assert!(o.status.success());
    let s = stdout(&o);
    for name in nnpoisson::config::PRESETS {
        assert!(s.contains(name), "{name} missing");
    }
}

#[test]
fn costmodel_prints_the_five_figures() {
    let dir = tempfile::tempdir().unwrap();
    let o = bin(&["costmodel", "--out", dir.path().to_str().unwrap()]);
    assert!(o.status.success());
    let s = stdout(&o);
    assert!(s.contains("h = 0.008"), "{s}");
    assert!(s.contains("5D:"));
    assert!(dir.path().join("cost_model.csv").exists());
    assert!(!dir.path().join(".lock").exists());
}

#[test]
fn usage_errors_exit_with_two() {
    assert_eq!(bin(&["solve", "--preset", "nope"]).status.code(), Some(2));
    assert_eq!(bin(&["costmodel", "--delta", "0"]).status.code(), Some(2));
    assert_eq!(bin(&["costmodel", "--delta", "-1e-5"]).status.code(), Some(2));
    assert_eq!(bin(&["solve", "--precision", "16"]).status.code(), Some(2));
    assert_eq!(bin(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(bin(&["fd", "--preset", "3d-linear"]).status.code(), Some(2));
}

#[test]
fn bad_config_field_is_named() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("bad.cfg");
    fs::write(&p, "theta = banana\n").unwrap();
    let o = bin(&["solve", "--config", p.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("theta"));
}

#[test]
fn gradcheck_reports_all_orders() {
    let o = bin(&["gradcheck", "--preset", "2d-nonlinear"]);
    assert!(o.status.success());
    let s = stdout(&o);
    for k in ["e2:", "e3:", "e4:"] {
        assert!(s.contains(k));
    }
    assert_eq!(s.matches("(ok tolerance").count(), 3, "{s}");
}

#[test]
fn fd_writes_convergence_csv() {
    let dir = tempfile::tempdir().unwrap();
    let o = bin(&["fd", "--h", "0.125,0.0625", "--out", dir.path().to_str().unwrap()]);
    assert!(o.status.success());
    let csv = fs::read_to_string(dir.path().join("fd_convergence.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);
}

#[test]
fn solve_writes_artifacts_and_validate_reproduces_them() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_tiny(dir.path());
    let out = dir.path().join("run");
    let out_s = out.to_str().unwrap();
    let o = bin(&["solve", "--config", &cfg, "--seed", "5", "--reproducible", "--out", out_s, "--progress", "0"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("grid: 40 points"));
    for f in ["weights.txt", "training_log.csv", "validation.txt", "resolved_config.txt", "grid.csv", "checkpoint.txt"] {
        assert!(out.join(f).exists(), "{f} missing");
    }
    assert!(!out.join(".lock").exists());
    let log = fs::read_to_string(out.join("training_log.csv")).unwrap();
    assert_eq!(log.lines().count(), 11);
    assert!(log.lines().skip(1).all(|l| l.ends_with(",0.000")));
    let resolved = fs::read_to_string(out.join("resolved_config.txt")).unwrap();
    assert!(resolved.contains("seed_weights = 5"));

    let v = bin(&["validate", "--out", out_s]);
    assert!(v.status.success(), "{}", String::from_utf8_lossy(&v.stderr));
    assert!(stdout(&v).contains("matches stored report: yes"), "{}", stdout(&v));
}

#[test]
fn occupied_output_directory_is_refused() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_tiny(dir.path());
    fs::write(dir.path().join(".lock"), "1").unwrap();
    let o = bin(&["solve", "--config", &cfg, "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(!dir.path().join("weights.txt").exists());
}

#[test]
fn single_precision_solve_runs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_tiny(dir.path());
    let o = bin(&["solve", "--config", &cfg, "--precision", "32", "--progress", "0", "--out", dir.path().join("r").to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let w = fs::read_to_string(dir.path().join("r/weights.txt")).unwrap();
    assert!(w.starts_with("layers: 2,8,8,1; precision: 32"));
}
