//! Model-complexity sweeps: expand a `c` grid, evaluate theory (and
//! optionally simulations) at every point, write CSV tables and SVG plots.

use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::activation::ActivationSpec;
use crate::error::{Error, Result};
use crate::format::fmt_num;
use crate::nu_system::{solve_nu, solve_nu_from, NuStar, SolverConfig, TheorySpec};
use crate::risk::{risk_from_nu, TheoryRisk};
use crate::simulator::{run_experiment, EmpiricalConfig};

/// Everything an empirical run needs besides the feature counts, which are
/// derived per grid point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmpiricalTemplate {
    pub d: usize,
    pub n: usize,
    pub activations: Vec<ActivationSpec>,
    pub n_test: usize,
    pub replications: usize,
    #[serde(default)]
    pub base_seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    /// Moments, λ, F0, F1, τ and ψ_n. Its `psi` is replaced at every point.
    pub base: TheorySpec,
    /// Relative widths; `ψ_c ∝ ratio_c`.
    pub ratios: Vec<f64>,
    /// Values of `c = Σψ_c / ψ_n`, strictly increasing.
    pub c_grid: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub empirical: Option<EmpiricalTemplate>,
}

/// One expanded grid point.
#[derive(Debug, Clone, PartialEq)]
pub struct GridPoint {
    pub c: f64,
    pub theory: TheorySpec,
    pub empirical: Option<EmpiricalConfig>,
    /// Some `N_c` rounded to 0 and was raised to 1.
    pub count_adjusted: bool,
}

/// `c` values from `start` to `stop` inclusive in steps of `step`.
pub fn c_range(start: f64, stop: f64, step: f64) -> Result<Vec<f64>> {
    if !(step > 0.0) || !start.is_finite() || !stop.is_finite() || stop < start {
        return Err(Error::InvalidGrid(format!(
            "bad range start={start} stop={stop} step={step}"
        )));
    }
    let count = ((stop - start) / step + 1e-9).floor() as usize + 1;
    Ok((0..count).map(|i| start + i as f64 * step).collect())
}

fn check(s: &SweepSpec) -> Result<()> {
    if s.c_grid.is_empty() {
        return Err(Error::EmptyGrid);
    }
    if s.c_grid.iter().any(|c| !(*c > 0.0) || !c.is_finite()) {
        return Err(Error::InvalidGrid(
            "c values must be positive and finite".into(),
        ));
    }
    if s.c_grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidGrid(
            "c_grid must be strictly increasing".into(),
        ));
    }
    if s.ratios.len() != s.base.moments.len() {
        return Err(Error::InvalidGrid(format!(
            "{} ratios for {} components",
            s.ratios.len(),
            s.base.moments.len()
        )));
    }
    if s.ratios.iter().any(|r| !(*r > 0.0) || !r.is_finite()) {
        return Err(Error::InvalidGrid(
            "ratios must be positive and finite".into(),
        ));
    }
    if let Some(t) = &s.empirical {
        if t.activations.len() != s.ratios.len() {
            return Err(Error::InvalidGrid(format!(
                "{} empirical activations for {} components",
                t.activations.len(),
                s.ratios.len()
            )));
        }
        if t.d == 0 || t.n == 0 {
            return Err(Error::InvalidGrid("empirical d and n must be >= 1".into()));
        }
        let ratio = t.n as f64 / t.d as f64;
        if (ratio - s.base.psi_n).abs() > 1e-12 * s.base.psi_n {
            return Err(Error::InvalidGrid(format!(
                "empirical n/d = {ratio} differs from psi_n = {}",
                s.base.psi_n
            )));
        }
    }
    Ok(())
}

/// One theory spec (and empirical config, if requested) per `c` value.
pub fn expand_grid(s: &SweepSpec) -> Result<Vec<GridPoint>> {
    check(s)?;
    let total: f64 = s.ratios.iter().sum();
    let points = s
        .c_grid
        .iter()
        .map(|&c| {
            let mut theory = s.base.clone();
            theory.psi = s
                .ratios
                .iter()
                .map(|r| r * c * s.base.psi_n / total)
                .collect();
            let mut count_adjusted = false;
            let empirical = s.empirical.as_ref().map(|t| {
                let n_features = s
                    .ratios
                    .iter()
                    .map(|r| {
                        let v = (r * c * t.n as f64 / total).round() as usize;
                        if v == 0 {
                            count_adjusted = true;
                        }
                        v.max(1)
                    })
                    .collect();
                EmpiricalConfig {
                    d: t.d,
                    n: t.n,
                    n_features,
                    activations: t.activations.clone(),
                    lambda: s.base.lambda,
                    f0: s.base.f0,
                    f1: s.base.f1,
                    tau: s.base.tau,
                    n_test: t.n_test,
                    replications: t.replications,
                    base_seed: t.base_seed,
                }
            });
            GridPoint {
                c,
                theory,
                empirical,
                count_adjusted,
            }
        })
        .collect();
    Ok(points)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub c: f64,
    pub psi: Vec<f64>,
    pub psi_n: f64,
    pub lambda: f64,
    pub theory_risk: Option<f64>,
    pub theory_bias: Option<f64>,
    pub theory_variance: Option<f64>,
    pub h_condition: Option<f64>,
    pub solver_iterations: Option<usize>,
    pub n_features: Option<Vec<usize>>,
    pub count_adjusted: bool,
    pub emp_mean: Option<f64>,
    pub emp_se: Option<f64>,
    pub replications: Option<usize>,
    /// Theory or simulation failure at this point, as `Class: message`.
    pub errors: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepMetadata {
    pub spec: SweepSpec,
    pub timestamp_unix: u64,
    pub version: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub rows: Vec<SweepRow>,
    pub metadata: SweepMetadata,
}

impl SweepResult {
    pub fn k(&self) -> usize {
        self.metadata.spec.ratios.len()
    }
}

/// Solve along the grid, warm-starting from the previous point and falling
/// back to a cold continuation solve if that fails.
fn theory_along_grid(points: &[GridPoint], cfg: &SolverConfig) -> Vec<Result<TheoryRisk>> {
    let mut prev: Option<NuStar> = None;
    points
        .iter()
        .map(|p| {
            let nu = prev
                .as_ref()
                .and_then(|w| solve_nu_from(&p.theory, cfg, &w.b).ok())
                .map_or_else(|| solve_nu(&p.theory, cfg), Ok);
            let out = nu.and_then(|nu| risk_from_nu(&p.theory, nu));
            prev = out.as_ref().ok().map(|r| r.nu.clone());
            out
        })
        .collect()
}

/// Evaluate every grid point. Failures are recorded in the row; only an
/// invalid grid is an error.
pub fn run_sweep(s: &SweepSpec, cfg: &SolverConfig) -> Result<SweepResult> {
    cfg.validate()?;
    let points = expand_grid(s)?;
    let theory = theory_along_grid(&points, cfg);
    let empirical: Vec<Option<Result<_>>> = points
        .par_iter()
        .map(|p| p.empirical.as_ref().map(run_experiment))
        .collect();
    let rows = points
        .iter()
        .zip(theory)
        .zip(empirical)
        .map(|((p, th), emp)| {
            let mut row = SweepRow {
                c: p.c,
                psi: p.theory.psi.clone(),
                psi_n: p.theory.psi_n,
                lambda: p.theory.lambda,
                theory_risk: None,
                theory_bias: None,
                theory_variance: None,
                h_condition: None,
                solver_iterations: None,
                n_features: p.empirical.as_ref().map(|e| e.n_features.clone()),
                count_adjusted: p.count_adjusted,
                emp_mean: None,
                emp_se: None,
                replications: None,
                errors: Vec::new(),
            };
            match th {
                Ok(r) => {
                    row.theory_risk = Some(r.risk);
                    row.theory_bias = Some(r.bias);
                    row.theory_variance = Some(r.variance);
                    row.h_condition = Some(r.h_condition);
                    row.solver_iterations = Some(r.nu.iterations);
                }
                Err(e) => row.errors.push(e.to_string()),
            }
            match emp {
                Some(Ok(e)) => {
                    row.replications = Some(e.per_replication.len());
                    row.emp_mean = Some(e.mean);
                    row.emp_se = Some(e.std_error);
                }
                Some(Err(e)) => row.errors.push(e.to_string()),
                None => {}
            }
            row
        })
        .collect();
    let timestamp_unix = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    Ok(SweepResult {
        rows,
        metadata: SweepMetadata {
            spec: s.clone(),
            timestamp_unix,
            version: env!("CARGO_PKG_VERSION").to_string(),
        },
    })
}

pub fn csv_header(k: usize) -> String {
    let mut cols = vec!["c".to_string()];
    cols.extend((1..=k).map(|i| format!("psi_{i}")));
    for name in [
        "psi_n",
        "lambda",
        "theory_risk",
        "theory_bias",
        "theory_variance",
        "emp_mean",
        "emp_se",
        "replications",
        "solver_iterations",
    ] {
        cols.push(name.to_string());
    }
    cols.join(",")
}

/// The CSV table as a string (header plus one LF-terminated line per row).
pub fn csv_string(r: &SweepResult) -> String {
    let opt = |v: Option<f64>| v.map(fmt_num).unwrap_or_default();
    let mut out = csv_header(r.k());
    out.push('\n');
    for row in &r.rows {
        let mut cells = vec![fmt_num(row.c)];
        cells.extend(row.psi.iter().map(|p| fmt_num(*p)));
        cells.push(fmt_num(row.psi_n));
        cells.push(fmt_num(row.lambda));
        cells.push(opt(row.theory_risk));
        cells.push(opt(row.theory_bias));
        cells.push(opt(row.theory_variance));
        cells.push(opt(row.emp_mean));
        cells.push(opt(row.emp_se));
        cells.push(row.replications.map(|v| v.to_string()).unwrap_or_default());
        cells.push(
            row.solver_iterations
                .map(|v| v.to_string())
                .unwrap_or_default(),
        );
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}

pub fn write_csv(r: &SweepResult, path: &Path) -> Result<()> {
    std::fs::write(path, csv_string(r))?;
    Ok(())
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SvgOptions {
    #[serde(default)]
    pub log_y: bool,
    /// Values above this are drawn at the cap with a triangle marker.
    #[serde(default)]
    pub y_cap: Option<f64>,
}

const W: f64 = 720.0;
const H: f64 = 480.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 20.0;
const TOP: f64 = 20.0;
const BOTTOM: f64 = 50.0;

struct Frame {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
    log_y: bool,
    cap: f64,
}

impl Frame {
    fn tx(&self, x: f64) -> f64 {
        LEFT + (x - self.x0) / (self.x1 - self.x0) * (W - LEFT - RIGHT)
    }

    fn ty(&self, y: f64) -> f64 {
        let f = |v: f64| if self.log_y { v.log10() } else { v };
        let y = y.min(self.cap);
        H - BOTTOM - (f(y) - f(self.y0)) / (f(self.y1) - f(self.y0)) * (H - TOP - BOTTOM)
    }
}

fn frame(r: &SweepResult, opts: &SvgOptions) -> Frame {
    let cap = opts.y_cap.unwrap_or(f64::INFINITY);
    let cs: Vec<f64> = r.rows.iter().map(|row| row.c).collect();
    let (mut x0, mut x1) = (cs[0], cs[cs.len() - 1]);
    if x1 <= x0 {
        x0 -= 0.5;
        x1 += 0.5;
    }
    let mut ys: Vec<f64> = Vec::new();
    for row in &r.rows {
        ys.extend(row.theory_risk);
        if let (Some(m), Some(se)) = (row.emp_mean, row.emp_se) {
            ys.push(m - 2.0 * se);
            ys.push(m + 2.0 * se);
        }
    }
    let usable: Vec<f64> = ys
        .into_iter()
        .filter(|v| v.is_finite() && (!opts.log_y || *v > 0.0))
        .map(|v| v.min(cap))
        .collect();
    let lo = usable.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = usable.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let (y0, y1) = if !lo.is_finite() {
        (if opts.log_y { 0.1 } else { 0.0 }, 1.0)
    } else if opts.log_y {
        let (a, b) = if hi > lo {
            (lo, hi)
        } else {
            (lo / 2.0, lo * 2.0)
        };
        (a / 1.1, b * 1.1)
    } else if hi > lo {
        let pad = 0.05 * (hi - lo);
        (lo - pad, hi + pad)
    } else {
        let pad = if lo == 0.0 { 1.0 } else { 0.5 * lo.abs() };
        (lo - pad, hi + pad)
    };
    Frame {
        x0,
        x1,
        y0,
        y1,
        log_y: opts.log_y,
        cap,
    }
}

fn ticks(lo: f64, hi: f64, log: bool) -> Vec<f64> {
    if log {
        let (a, b) = (lo.log10().ceil() as i32, hi.log10().floor() as i32);
        return (a..=b).map(|e| 10f64.powi(e)).collect();
    }
    (0..=4).map(|i| lo + (hi - lo) * i as f64 / 4.0).collect()
}

fn tick_label(v: f64) -> String {
    let s = format!("{:.3}", v);
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" {
        "0".into()
    } else {
        s.to_string()
    }
}

/// Standalone SVG: theory polyline, empirical markers with ±2·se whiskers,
/// clipped values drawn as triangles at the cap.
pub fn svg_string(r: &SweepResult, opts: &SvgOptions) -> Result<String> {
    if r.rows.is_empty() {
        return Err(Error::EmptyGrid);
    }
    let f = frame(r, opts);
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#
    );
    let _ = writeln!(
        s,
        r#"<rect x="0" y="0" width="{W}" height="{H}" fill="white"/>"#
    );
    let (bx, by) = (H - BOTTOM, LEFT);
    let _ = writeln!(
        s,
        r#"<line class="axis" x1="{LEFT}" y1="{bx}" x2="{}" y2="{bx}" stroke="black"/>"#,
        W - RIGHT
    );
    let _ = writeln!(
        s,
        r#"<line class="axis" x1="{by}" y1="{TOP}" x2="{by}" y2="{bx}" stroke="black"/>"#
    );
    for t in ticks(f.x0, f.x1, false) {
        let x = f.tx(t);
        let _ = writeln!(
            s,
            r#"<text class="tick" x="{x:.2}" y="{:.2}" font-size="11" text-anchor="middle">{}</text>"#,
            bx + 16.0,
            tick_label(t)
        );
    }
    for t in ticks(f.y0, f.y1, f.log_y) {
        let y = f.ty(t);
        let _ = writeln!(
            s,
            r#"<text class="tick" x="{:.2}" y="{:.2}" font-size="11" text-anchor="end">{}</text>"#,
            by - 6.0,
            y + 4.0,
            tick_label(t)
        );
    }
    let _ = writeln!(
        s,
        r#"<text class="xlabel" x="{:.2}" y="{:.2}" font-size="14" text-anchor="middle">c</text>"#,
        LEFT + (W - LEFT - RIGHT) / 2.0,
        H - 12.0
    );
    let _ = writeln!(
        s,
        r#"<text class="ylabel" x="18" y="{:.2}" font-size="14" text-anchor="middle" transform="rotate(-90 18 {:.2})">excess risk</text>"#,
        TOP + (H - TOP - BOTTOM) / 2.0,
        TOP + (H - TOP - BOTTOM) / 2.0
    );

    let drawable = |v: f64| v.is_finite() && (!f.log_y || v > 0.0);
    let theory: Vec<(f64, f64)> = r
        .rows
        .iter()
        .filter_map(|row| row.theory_risk.filter(|v| drawable(*v)).map(|v| (row.c, v)))
        .collect();
    let points: Vec<String> = theory
        .iter()
        .map(|(c, v)| format!("{:.3},{:.3}", f.tx(*c), f.ty(*v)))
        .collect();
    let _ = writeln!(
        s,
        r#"<polyline class="theory" fill="none" stroke="steelblue" stroke-width="1.5" points="{}"/>"#,
        points.join(" ")
    );
    if r.rows.len() == 1 {
        for (c, v) in &theory {
            let _ = writeln!(
                s,
                r#"<circle class="marker theory-point" cx="{:.3}" cy="{:.3}" r="3" fill="steelblue"/>"#,
                f.tx(*c),
                f.ty(*v)
            );
        }
    }
    for row in &r.rows {
        let (Some(m), Some(se)) = (row.emp_mean, row.emp_se) else {
            continue;
        };
        if !drawable(m) {
            continue;
        }
        let x = f.tx(row.c);
        let lo = m - 2.0 * se;
        let lo_px = if drawable(lo) { f.ty(lo) } else { H - BOTTOM };
        let _ = writeln!(
            s,
            r#"<line class="whisker" x1="{x:.3}" y1="{lo_px:.3}" x2="{x:.3}" y2="{:.3}" stroke="firebrick"/>"#,
            f.ty(m + 2.0 * se)
        );
        let _ = writeln!(
            s,
            r#"<circle class="marker empirical" cx="{x:.3}" cy="{:.3}" r="3" fill="firebrick"/>"#,
            f.ty(m)
        );
    }
    for row in &r.rows {
        for v in row.theory_risk.iter().chain(row.emp_mean.iter()) {
            if *v > f.cap && v.is_finite() {
                let (x, y) = (f.tx(row.c), f.ty(f.cap));
                let _ = writeln!(
                    s,
                    r#"<path class="clipped" d="M {:.3} {:.3} L {:.3} {:.3} L {:.3} {:.3} Z" fill="black"/>"#,
                    x - 4.0,
                    y + 2.0,
                    x + 4.0,
                    y + 2.0,
                    x,
                    y - 5.0
                );
            }
        }
    }
    s.push_str("</svg>\n");
    Ok(s)
}

pub fn render_svg(r: &SweepResult, path: &Path, opts: &SvgOptions) -> Result<()> {
    let s = svg_string(r, opts)?;
    std::fs::write(path, s)?;
    Ok(())
}

/// Indices `i` with `y[i-1] < y[i] > y[i+1]`. NaN neighbours never qualify.
pub fn local_maxima(ys: &[f64]) -> Vec<usize> {
    (1..ys.len().saturating_sub(1))
        .filter(|&i| ys[i] > ys[i - 1] && ys[i] > ys[i + 1])
        .collect()
}
