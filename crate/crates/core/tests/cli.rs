use std::path::Path;
use std::process::{Command, Output};

use serde_json::{json, Value};

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_multidescent"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn write_cfg(dir: &Path, name: &str, v: &Value) -> String {
    let p = dir.join(name);
    std::fs::write(&p, v.to_string()).unwrap();
    p.to_str().unwrap().to_string()
}

fn stdout_json(o: &Output) -> Value {
    serde_json::from_slice(&o.stdout).expect("stdout is JSON")
}

fn stderr_lines(o: &Output) -> Vec<String> {
    String::from_utf8_lossy(&o.stderr)
        .lines()
        .map(str::to_string)
        .collect()
}

fn relu_cfg() -> Value {
    json!({"activations": [{"kind": "relu"}], "model": {"psi": [1], "psi_n": 1}, "lambda": 1})
}

#[test]
fn moments_prints_relu_mean() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_cfg(dir.path(), "c.json", &relu_cfg());
    let o = run(dir.path(), &["moments", "--config", &cfg]);
    assert!(o.status.success());
    assert!(String::from_utf8_lossy(&o.stdout).contains("0.398942280401"));
    let v = stdout_json(&o);
    assert_eq!(v["moments"][0]["mu1"], json!(0.5));
}

#[test]
fn theory_on_zero_moments_is_signal_energy() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_cfg(
        dir.path(),
        "c.json",
        &json!({
            "moments_override": [{"mu0": 0, "mu1": 0, "mu2_sq": 0}],
            "model": {"psi": [1], "psi_n": 1},
            "lambda": 1, "F1": 1
        }),
    );
    let o = run(dir.path(), &["theory", "--config", &cfg]);
    assert!(o.status.success());
    let v = stdout_json(&o);
    assert_eq!(v["risk"].as_f64().unwrap(), 1.0);
    assert!(v["nu"]["b"].is_array());
    // diagnostics stay off stdout
    assert!(!String::from_utf8_lossy(&o.stdout).contains("iterations,"));
    assert!(String::from_utf8_lossy(&o.stderr).contains("solver:"));
}

#[test]
fn sweep_writes_csv_svg_json() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_cfg(
        dir.path(),
        "c.json",
        &json!({
            "moments_override": [{"mu0": 0.5, "mu1": 1, "mu2_sq": 0.5}, {"mu0": 0, "mu1": 0.5, "mu2_sq": 0.25}],
            "model": {"psi_n": 2},
            "lambda": 0.1, "tau": 0.5,
            "sweep": {"c_start": 0.5, "c_stop": 2.0, "c_step": 0.5},
            "output": {"csv_path": "out.csv", "svg_path": "out.svg", "json_path": "out.json"}
        }),
    );
    let o = run(dir.path(), &["sweep", "--config", &cfg]);
    assert!(o.status.success(), "{:?}", stderr_lines(&o));
    let csv = std::fs::read_to_string(dir.path().join("out.csv")).unwrap();
    assert!(csv.starts_with(
        "c,psi_1,psi_2,psi_n,lambda,theory_risk,theory_bias,theory_variance,emp_mean,emp_se,replications,solver_iterations\n"
    ));
    assert_eq!(csv.lines().count(), 5);
    assert_eq!(String::from_utf8_lossy(&o.stdout), csv);
    assert!(std::fs::read_to_string(dir.path().join("out.svg"))
        .unwrap()
        .contains("<polyline"));
    let j: Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("out.json")).unwrap())
            .unwrap();
    assert_eq!(j["rows"].as_array().unwrap().len(), 4);
    assert!(j["metadata"]["timestamp_unix"].is_u64());
}

#[test]
fn limit_subcommand() {
    let dir = tempfile::tempdir().unwrap();
    let m = json!({"mu0": 0, "mu1": 1, "mu2_sq": 1});
    let cfg = write_cfg(
        dir.path(),
        "c.json",
        &json!({"moments_override": [m, m], "model": {"psi_n": 2}, "lambda": 1e-3, "limit": {"r1": 1, "r2": 1}}),
    );
    let o = run(dir.path(), &["limit", "--config", &cfg]);
    assert!(o.status.success());
    let v = stdout_json(&o)["limit_risk"].as_f64().unwrap();
    assert!((v - (2f64.sqrt() - 1.0) / 2.0).abs() < 1e-11);
}

#[test]
fn simulate_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_cfg(
        dir.path(),
        "c.json",
        &json!({
            "activations": [{"kind": "relu"}, {"kind": "tanh"}],
            "model": {"d": 10, "n": 20, "N": [8, 8]},
            "lambda": 0.01, "F0": 0.1, "tau": 0.1,
            "empirical": {"n_test": 40, "replications": 4, "base_seed": 3}
        }),
    );
    let a = run(dir.path(), &["simulate", "--config", &cfg]);
    let b = run(dir.path(), &["simulate", "--config", &cfg]);
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout);
    assert_eq!(
        stdout_json(&a)["per_replication"].as_array().unwrap().len(),
        4
    );
    let c = run(
        dir.path(),
        &[
            "simulate",
            "--config",
            &cfg,
            "--set",
            "empirical.base_seed=4",
        ],
    );
    assert_ne!(a.stdout, c.stdout);
}

fn assert_single_error(o: &Output, code: i32, class: &str) {
    assert_eq!(o.status.code(), Some(code), "{:?}", stderr_lines(o));
    let lines = stderr_lines(o);
    assert_eq!(lines.len(), 1, "{lines:?}");
    assert!(lines[0].contains(class), "{lines:?}");
    assert!(o.stdout.is_empty());
}

#[test]
fn config_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_cfg(dir.path(), "c.json", &relu_cfg());
    let o = run(
        dir.path(),
        &["theory", "--config", &cfg, "--set", "lambda=0"],
    );
    assert_single_error(&o, 2, "ConfigError");
    assert!(stderr_lines(&o)[0].contains("lambda must be > 0"));

    let o = run(
        dir.path(),
        &["theory", "--config", &cfg, "--set", "model.bogus=1"],
    );
    assert_single_error(&o, 2, "ConfigError");
    assert!(stderr_lines(&o)[0].contains("/model"));

    let bad = write_cfg(
        dir.path(),
        "z.json",
        &json!({"activations": [{"kind": "identity"}, {"kind": "sin"}], "model": {"psi": [1, 1], "psi_n": 1}, "lambda": 1, "F0": 0.2}),
    );
    assert_single_error(
        &run(dir.path(), &["theory", "--config", &bad]),
        2,
        "ConfigError",
    );

    std::fs::write(dir.path().join("broken.json"), "{ not json").unwrap();
    assert_single_error(
        &run(dir.path(), &["moments", "--config", "broken.json"]),
        2,
        "ConfigError",
    );

    assert_single_error(&run(dir.path(), &["frobnicate"]), 2, "UsageError");
}

#[test]
fn solver_failure_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_cfg(dir.path(), "c.json", &relu_cfg());
    let o = run(
        dir.path(),
        &[
            "theory",
            "--config",
            &cfg,
            "--set",
            "solver.max_iter=2",
            "--set",
            "lambda=1e-4",
        ],
    );
    assert_single_error(&o, 3, "NoConvergence");
}

#[test]
fn io_failures_exit_4() {
    let dir = tempfile::tempdir().unwrap();
    assert_single_error(
        &run(dir.path(), &["theory", "--config", "missing.json"]),
        4,
        "IoError",
    );
    let cfg = write_cfg(dir.path(), "c.json", &relu_cfg());
    let o = run(
        dir.path(),
        &[
            "theory",
            "--config",
            &cfg,
            "--set",
            "output.json_path=no/such/dir/x.json",
        ],
    );
    assert_eq!(o.status.code(), Some(4));
    let errs: Vec<String> = stderr_lines(&o)
        .into_iter()
        .filter(|l| l.contains("IoError"))
        .collect();
    assert_eq!(errs.len(), 1);
}

#[test]
fn thread_variable_is_validated() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_cfg(dir.path(), "c.json", &relu_cfg());
    let o = Command::new(env!("CARGO_BIN_EXE_multidescent"))
        .args(["moments", "--config", &cfg])
        .env("MULTIDESCENT_THREADS", "zero")
        .output()
        .unwrap();
    assert_single_error(&o, 2, "ConfigError");
}
