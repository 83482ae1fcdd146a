//! Black-box tests of the `fspronto` binary: exit codes, artifacts, determinism.

use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn fspronto(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fspronto"))
        .args(["--log-level", "error", "--output-dir"])
        .arg(dir)
        .args(args)
        .output()
        .unwrap()
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn solve_converges_and_is_deterministic() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let args = ["solve", "--nodes", "501"];
    assert_eq!(fspronto(a.path(), &args).status.code(), Some(0));
    assert_eq!(fspronto(b.path(), &args).status.code(), Some(0));
    for name in ["solution.csv", "history.json"] {
        let (x, y) = (std::fs::read(a.path().join(name)).unwrap(), std::fs::read(b.path().join(name)).unwrap());
        assert!(x == y, "{name} differs between runs");
    }
    let history = read_json(&a.path().join("history.json"));
    assert_eq!(history["status"], "converged");
    assert_eq!(history["config"]["n_nodes"], 501);
    let iterations = history["iterations"].as_array().unwrap();
    assert!(iterations.last().unwrap()["descent_abs"].as_f64().unwrap() < 1e-6);
}

#[test]
fn iteration_limit_exits_two_and_dumps_iterates() {
    let dir = tempfile::tempdir().unwrap();
    let out = fspronto(dir.path(), &["solve", "--nodes", "401", "--max-iters", "2", "--dump-iterates"]);
    assert_eq!(out.status.code(), Some(2));
    for i in 0..=2 {
        assert!(dir.path().join(format!("iter_{i}.csv")).is_file(), "missing iter_{i}.csv");
    }
    assert_eq!(read_json(&dir.path().join("history.json"))["status"], "max_iterations");
    let solution = std::fs::read_to_string(dir.path().join("solution.csv")).unwrap();
    assert_eq!(solution, std::fs::read_to_string(dir.path().join("iter_2.csv")).unwrap());
}

#[test]
fn bad_config_exits_one_with_error_report() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("bad.json");
    std::fs::write(&config, r#"{"model": "pendulum", "horizon": 1}"#).unwrap();
    let out = fspronto(dir.path(), &["--config", config.to_str().unwrap(), "solve"]);
    assert_eq!(out.status.code(), Some(1));
    let report = read_json(&dir.path().join("error.json"));
    assert_eq!(report["kind"], "config");
    assert!(report["message"].as_str().unwrap().contains("cost"));
    assert!(!String::from_utf8_lossy(&out.stderr).is_empty());
}

#[test]
fn unknown_config_name_and_bad_flags_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(fspronto(dir.path(), &["--config", "no_such_thing", "solve"]).status.code(), Some(1));
    assert_eq!(fspronto(dir.path(), &["solve", "--hessian-mode", "exact"]).status.code(), Some(1));
    assert_eq!(fspronto(dir.path(), &["--help"]).status.code(), Some(0));
}

#[test]
fn lq_writes_gain_riccati_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(fspronto(dir.path(), &["lq", "--nodes", "401"]).status.code(), Some(0));
    for name in ["zeta.csv", "riccati_P.csv", "gain_K.csv"] {
        assert!(dir.path().join(name).is_file(), "missing {name}");
    }
    let summary = read_json(&dir.path().join("summary.json"));
    assert!(summary["terminal_error"].as_f64().unwrap() < 1e-9);
    assert!(summary["gramian_condition"].as_f64().unwrap() >= 1.0);
}

#[test]
fn random_lq_depends_on_seed() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let run = |dir: &Path, seed: &str| {
        let out = fspronto(dir, &["--seed", seed, "lq", "--random", "--nodes", "101", "--state-dim", "3"]);
        assert_eq!(out.status.code(), Some(0));
        read_json(&dir.join("summary.json"))["cost"].as_f64().unwrap()
    };
    let (c1, c2) = (run(a.path(), "1"), run(b.path(), "2"));
    assert_ne!(c1, c2);
    assert_eq!(run(a.path(), "1"), c1);
}

#[test]
fn project_reaches_requested_target() {
    let dir = tempfile::tempdir().unwrap();
    let out = fspronto(dir.path(), &["project", "--nodes", "401", "--target", "0.1,-0.2", "--gain-q", "10,1"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let report = read_json(&dir.path().join("report.json"));
    let errors = report["terminal_error_history"].as_array().unwrap();
    assert!(errors.last().unwrap().as_f64().unwrap() < 1e-6, "{report}");
    let projected = std::fs::read_to_string(dir.path().join("projected.csv")).unwrap();
    let last: Vec<f64> = projected.lines().last().unwrap().split(',').map(|v| v.parse().unwrap()).collect();
    assert!((last[1] - 0.1).abs() < 1e-6 && (last[2] + 0.2).abs() < 1e-6);
}

#[test]
fn project_rejects_wrong_target_dimension() {
    let dir = tempfile::tempdir().unwrap();
    let out = fspronto(dir.path(), &["project", "--nodes", "101", "--target", "1,2,3"]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(read_json(&dir.path().join("error.json"))["kind"], "dimension");
}
