use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use mmq_cli::{run_command, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_OK};
use serde_json::Value;

fn config(extra: &str) -> String {
    format!(
        r#"
label = "sym"

[model]
n = 100
alpha = 1.0
Q = [[-1.0, 1.0], [1.0, -1.0]]
lambda = [[1.5, 0.5]]
mu = [[1.0, 1.0]]
gamma = [[0.5, 0.5]]
lambda_hat = [[0.0, 0.0]]
mu_hat = [[0.0, 0.0]]

[run]
seed = 2024
horizon = 5.0
dt = 0.01
replications = 3
{extra}
"#
    )
}

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let p = dir.join("config.toml");
    fs::write(&p, text).unwrap();
    p
}

fn run(args: &[&str]) -> i32 {
    let mut argv = vec!["mmq"];
    argv.extend_from_slice(args);
    run_command(argv)
}

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(p).unwrap()).unwrap()
}

#[test]
fn env_analyze_reports_deviation_matrix() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), &config(""));
    let out = tmp.path().join("runs");
    let code = run(&["env-analyze", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(code, EXIT_OK);
    let r = read_json(&out.join("sym/env-analyze/report.json"));
    let expect = [[0.25, -0.25], [-0.25, 0.25]];
    for i in 0..2 {
        for j in 0..2 {
            let v = r["upsilon"][i][j].as_f64().unwrap();
            assert!((v - expect[i][j]).abs() < 1e-10, "upsilon[{i}][{j}] = {v}");
        }
    }
    assert!((r["theta"][0][0].as_f64().unwrap() - 0.25).abs() < 1e-12);
    assert!(out.join("sym/env-analyze/manifest.json").exists());
}

#[test]
fn simulate_is_deterministic_and_thread_independent() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), &config(""));
    let c = cfg.to_str().unwrap();
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    assert_eq!(run(&["simulate", "--config", c, "--out", a.to_str().unwrap(), "--threads", "1"]), EXIT_OK);
    assert_eq!(run(&["simulate", "--config", c, "--out", b.to_str().unwrap(), "--threads", "3"]), EXIT_OK);
    for name in ["trajectory_0000.csv", "trajectory_0002.csv", "summary.json", "manifest.json"] {
        let x = fs::read(a.join("sym/simulate").join(name)).unwrap();
        let y = fs::read(b.join("sym/simulate").join(name)).unwrap();
        assert!(!x.is_empty());
        assert_eq!(x, y, "{name} differs");
    }
    let header = fs::read_to_string(a.join("sym/simulate/trajectory_0000.csv")).unwrap();
    assert!(header.starts_with("t,X_1,Z_1,Q_1,j\n"));
}

#[test]
fn seed_override_changes_output() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), &config(""));
    let c = cfg.to_str().unwrap();
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    assert_eq!(run(&["simulate", "--config", c, "--out", a.to_str().unwrap()]), EXIT_OK);
    assert_eq!(run(&["simulate", "--config", c, "--out", b.to_str().unwrap(), "--seed", "5"]), EXIT_OK);
    let x = fs::read(a.join("sym/simulate/trajectory_0000.csv")).unwrap();
    let y = fs::read(b.join("sym/simulate/trajectory_0000.csv")).unwrap();
    assert_ne!(x, y);
    let m = read_json(&b.join("sym/simulate/manifest.json"));
    assert_eq!(m["seed"].as_u64(), Some(5));
    assert_eq!(m["overrides"]["seed"].as_u64(), Some(5));
}

#[test]
fn refuses_to_overwrite() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), &config(""));
    let c = cfg.to_str().unwrap();
    let out = tmp.path().join("runs");
    let o = out.to_str().unwrap();
    assert_eq!(run(&["env-analyze", "--config", c, "--out", o]), EXIT_OK);
    let before = fs::read(out.join("sym/env-analyze/report.json")).unwrap();
    assert_eq!(run(&["env-analyze", "--config", c, "--out", o, "--n", "400"]), EXIT_CONFIG);
    assert_eq!(fs::read(out.join("sym/env-analyze/report.json")).unwrap(), before);
    let leftovers: Vec<_> = fs::read_dir(out.join("sym"))
        .unwrap()
        .map(|e| e.unwrap().file_name())
        .collect();
    assert_eq!(leftovers.len(), 1, "{leftovers:?}");
}

#[test]
fn constant_cost_hook_through_solve_hjb() {
    let tmp = tempfile::tempdir().unwrap();
    let extra = r#"
[cost]
kind = "constant"
r = 2.5

[solver]
half_width = [6.0]
h = [0.1]
criterion = "discounted"
theta = 0.5
"#;
    let cfg = write_config(tmp.path(), &config(extra));
    let c = cfg.to_str().unwrap();
    let out = tmp.path().join("runs");
    let o = out.to_str().unwrap();
    assert_eq!(run(&["solve-hjb", "--config", c, "--out", o, "--criterion", "ergodic"]), EXIT_OK);
    let r = read_json(&out.join("sym/solve-hjb/report.json"));
    assert!((r["rho_star"].as_f64().unwrap() - 2.5).abs() < 1e-8, "{r}");
    let field = fs::read_to_string(out.join("sym/solve-hjb/value.csv")).unwrap();
    assert!(field.starts_with("x_1,V,u_1\n"));

    let out2 = tmp.path().join("runs2");
    assert_eq!(run(&["solve-hjb", "--config", c, "--out", out2.to_str().unwrap()]), EXIT_OK);
    let r = read_json(&out2.join("sym/solve-hjb/report.json"));
    assert!((r["value_at_origin"].as_f64().unwrap() - 5.0).abs() < 1e-8, "{r}");
}

#[test]
fn replay_reproduces_every_artifact() {
    let tmp = tempfile::tempdir().unwrap();
    let extra = r#"
[cost]
kind = "power"
c = 1.0
m = 2.0

[solver]
half_width = [8.0]
h = [0.05]
"#;
    let cfg = write_config(tmp.path(), &config(extra));
    let c = cfg.to_str().unwrap();
    let out = tmp.path().join("runs");
    let o = out.to_str().unwrap();
    for cmd in ["simulate", "sde", "solve-hjb"] {
        assert_eq!(run(&[cmd, "--config", c, "--out", o, "--T", "3"]), EXIT_OK, "{cmd}");
        let manifest = out.join("sym").join(cmd).join("manifest.json");
        let outcome = mmq_cli::replay(&manifest, &tmp.path().join(format!("replay-{cmd}")), Some(1)).unwrap();
        assert!(outcome.identical(), "{}", outcome.summary());
        assert!(outcome.compared >= 2);
    }
}

#[test]
fn config_errors_exit_with_two() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), &config("").replace("seed = 2024", ""));
    let out = tmp.path().join("runs");
    assert_eq!(run(&["simulate", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]), EXIT_CONFIG);
    assert!(!out.join("sym").exists());
    assert_eq!(run(&["simulate", "--bogus"]), EXIT_CONFIG);
    let missing = tmp.path().join("nope.toml");
    assert_eq!(run(&["simulate", "--config", missing.to_str().unwrap()]), EXIT_CONFIG);
}

#[test]
fn numerical_failures_exit_with_three() {
    let tmp = tempfile::tempdir().unwrap();
    let extra = r#"
[cost]
kind = "power"
c = 1.0
m = 2.0

[solver]
half_width = [8.0]
h = [0.05]
tol = 1e-30
max_iter = 1
"#;
    let cfg = write_config(tmp.path(), &config(extra));
    let out = tmp.path().join("runs");
    let code = run(&["solve-hjb", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(code, EXIT_NUMERICAL);
    assert!(!out.join("sym/solve-hjb").exists());
}

#[test]
fn binary_runs() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), &config(""));
    let status = Command::new(env!("CARGO_BIN_EXE_mmq"))
        .args(["env-analyze", "--config", cfg.to_str().unwrap(), "--out"])
        .arg(tmp.path().join("runs"))
        .status()
        .unwrap();
    assert!(status.success());
    let status = Command::new(env!("CARGO_BIN_EXE_mmq")).arg("--version").status().unwrap();
    assert!(status.success());
}
