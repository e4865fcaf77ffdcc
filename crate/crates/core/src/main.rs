use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::Serialize;
use serde_json::{json, Value};

use multidescent::config::{load_config, RootConfig};
use multidescent::format::round_json;
use multidescent::risk::{asymptotic_risk, limit_risk_infinite_width};
use multidescent::sweep::{csv_string, render_svg, run_sweep};
use multidescent::{run_experiment, Error, Result};

#[derive(Parser)]
#[command(
    name = "multidescent",
    version,
    about = "Excess risk of multiple random feature models"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(clap::Args)]
struct Common {
    /// JSON configuration file.
    #[arg(long)]
    config: PathBuf,
    /// Dotted-path override such as `model.psi.0=2` (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Spherical moments of each activation.
    Moments(Common),
    /// Asymptotic risk at the configured ψ.
    Theory(Common),
    /// Monte Carlo risk of finite random-feature ridge regression.
    Simulate(Common),
    /// Theory (and optionally simulation) over a complexity grid; CSV on stdout.
    Sweep(Common),
    /// Infinite-width limit of the two-component risk.
    Limit(Common),
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config { .. }
        | Error::InvalidSpec(_)
        | Error::InvalidQuadrature(_)
        | Error::EmptyGrid
        | Error::InvalidGrid(_)
        | Error::WrongK(_)
        | Error::ShapeMismatch(_) => 2,
        Error::Io(_) => 4,
        _ => 3,
    }
}

fn to_json<T: Serialize>(v: &T) -> Value {
    let mut v = serde_json::to_value(v).unwrap_or(Value::Null);
    round_json(&mut v);
    v
}

fn emit_json(v: &Value, path: Option<&Path>) -> Result<()> {
    let text = serde_json::to_string_pretty(v).map_err(|e| Error::Io(e.to_string()))?;
    if let Some(p) = path {
        std::fs::write(p, format!("{text}\n"))
            .map_err(|e| Error::Io(format!("{}: {e}", p.display())))?;
    }
    to_stdout(&format!("{text}\n"))
}

// a closed pipe (e.g. `| head`) is not an error
fn to_stdout(text: &str) -> Result<()> {
    let mut out = std::io::stdout().lock();
    match out.write_all(text.as_bytes()).and_then(|_| out.flush()) {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => {
            Err(Error::Io(format!("stdout: {e}")))
        }
        _ => Ok(()),
    }
}

fn write_file(path: &Path, f: impl FnOnce() -> Result<()>) -> Result<()> {
    f().map_err(|e| match e {
        Error::Io(m) => Error::Io(format!("{}: {m}", path.display())),
        other => other,
    })
}

fn run_moments(cfg: &RootConfig) -> Result<()> {
    let items: Vec<Value> = cfg
        .moments()
        .iter()
        .enumerate()
        .map(|(i, m)| {
            let mut v =
                json!({"mu0": m.mu0, "mu1": m.mu1, "mu2_sq": m.mu2_sq, "mu1_sq": m.mu1_sq()});
            if let Some(a) = cfg.activations.as_ref().and_then(|a| a.get(i)) {
                v["activation"] = to_json(a);
            }
            v
        })
        .collect();
    emit_json(
        &to_json(&json!({ "moments": items })),
        cfg.output.json_path.as_deref(),
    )
}

fn run_theory(cfg: &RootConfig) -> Result<()> {
    let spec = cfg.theory_spec()?;
    spec.check_intercept_learnable()?;
    let r = asymptotic_risk(&spec, &cfg.solver)?;
    eprintln!(
        "solver: {} iterations, relative residual {:e}",
        r.nu.iterations, r.nu.residual
    );
    if r.ill_conditioned() {
        eprintln!(
            "warning: H condition number {:e} exceeds 1e12",
            r.h_condition
        );
    }
    emit_json(&to_json(&r), cfg.output.json_path.as_deref())
}

fn run_simulate(cfg: &RootConfig) -> Result<()> {
    let e = cfg.empirical_config()?;
    let r = run_experiment(&e)?;
    emit_json(&to_json(&r), cfg.output.json_path.as_deref())
}

fn run_sweep_cmd(cfg: &RootConfig) -> Result<()> {
    let spec = cfg.sweep_spec()?;
    let r = run_sweep(&spec, &cfg.solver)?;
    let mut failed = 0;
    for row in &r.rows {
        for e in &row.errors {
            failed += 1;
            eprintln!("warning: c = {}: {e}", row.c);
        }
        if let Some(h) = row
            .h_condition
            .filter(|h| *h > multidescent::risk::ILL_CONDITIONED)
        {
            eprintln!(
                "warning: c = {}: H condition number {h:e} exceeds 1e12",
                row.c
            );
        }
        if row.count_adjusted {
            eprintln!(
                "warning: c = {}: a feature count rounded to 0 was raised to 1",
                row.c
            );
        }
    }
    let iterations: usize = r.rows.iter().filter_map(|x| x.solver_iterations).sum();
    eprintln!(
        "sweep: {} points, {failed} failures, {iterations} solver iterations",
        r.rows.len()
    );
    let csv = csv_string(&r);
    if let Some(p) = &cfg.output.csv_path {
        write_file(p, || Ok(std::fs::write(p, &csv)?))?;
    }
    if let Some(p) = &cfg.output.svg_path {
        write_file(p, || render_svg(&r, p, &cfg.svg_options()))?;
    }
    if let Some(p) = &cfg.output.json_path {
        let text =
            serde_json::to_string_pretty(&to_json(&r)).map_err(|e| Error::Io(e.to_string()))?;
        write_file(p, || Ok(std::fs::write(p, format!("{text}\n"))?))?;
    }
    to_stdout(&csv)?;
    Ok(())
}

fn run_limit(cfg: &RootConfig) -> Result<()> {
    let l = cfg.limit_spec()?;
    let v = limit_risk_infinite_width(&l)?;
    emit_json(
        &to_json(&json!({"limit_risk": v, "psi3": l.psi3, "r1": l.r1, "r2": l.r2})),
        cfg.output.json_path.as_deref(),
    )
}

fn setup_threads() -> Result<()> {
    let Ok(raw) = std::env::var("MULTIDESCENT_THREADS") else {
        return Ok(());
    };
    let n: usize = raw.trim().parse().ok().filter(|n| *n >= 1).ok_or_else(|| {
        Error::config(
            "/",
            format!("MULTIDESCENT_THREADS={raw} is not a positive integer"),
        )
    })?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::config("/", format!("thread pool: {e}")))
}

fn run(cli: Cli) -> Result<()> {
    setup_threads()?;
    let (common, f): (&Common, fn(&RootConfig) -> Result<()>) = match &cli.cmd {
        Cmd::Moments(c) => (c, run_moments),
        Cmd::Theory(c) => (c, run_theory),
        Cmd::Simulate(c) => (c, run_simulate),
        Cmd::Sweep(c) => (c, run_sweep_cmd),
        Cmd::Limit(c) => (c, run_limit),
    };
    let cfg = load_config(&common.config, &common.set)?;
    f(&cfg)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = e.kind().to_string();
            let detail = e.to_string();
            let first = detail
                .lines()
                .next()
                .unwrap_or("")
                .trim_start_matches("error: ");
            eprintln!("UsageError: {msg}: {first}");
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.to_string().replace('\n', " "));
            ExitCode::from(exit_code(&e))
        }
    }
}
