//! JSON run configuration: parsing, `--set` overrides and eager validation.
//!
//! A config names its activations (or gives their moments directly), the
//! model size either as ratios (`psi`, `psi_n`) or as counts (`d`, `n`, `N`),
//! the ridge penalty and target parameters, and optional sections for
//! simulation, sweeps, the infinite-width limit and output paths.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::activation::{compute_moments, ActivationSpec, Moments, QuadratureConfig};
use crate::error::{Error, Result};
use crate::nu_system::{SolverConfig, TheorySpec, MIN_MU0_SQ};
use crate::risk::LimitSpec;
use crate::simulator::EmpiricalConfig;
use crate::sweep::{c_range, expand_grid, EmpiricalTemplate, SvgOptions, SweepSpec};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub psi: Option<Vec<f64>>,
    pub psi_n: Option<f64>,
    pub d: Option<usize>,
    pub n: Option<usize>,
    #[serde(rename = "N")]
    pub n_features: Option<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmpiricalSection {
    #[serde(default = "default_n_test")]
    pub n_test: usize,
    #[serde(default = "default_replications")]
    pub replications: usize,
    #[serde(default)]
    pub base_seed: u64,
}

fn default_n_test() -> usize {
    700
}

fn default_replications() -> usize {
    30
}

impl Default for EmpiricalSection {
    fn default() -> Self {
        Self {
            n_test: default_n_test(),
            replications: default_replications(),
            base_seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    /// Relative widths; all ones when omitted.
    pub ratios: Option<Vec<f64>>,
    /// Explicit grid, or else `c_start..=c_stop` in steps of `c_step`.
    pub c_grid: Option<Vec<f64>>,
    pub c_start: Option<f64>,
    pub c_stop: Option<f64>,
    #[serde(default = "default_c_step")]
    pub c_step: f64,
    /// Also simulate at every grid point (needs `d`, `n` and activations).
    #[serde(default)]
    pub empirical: bool,
    #[serde(default)]
    pub svg: SvgOptions,
}

fn default_c_step() -> f64 {
    0.05
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LimitSection {
    pub r1: f64,
    pub r2: f64,
    /// Defaults to the model's `psi_n`.
    pub psi3: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    pub csv_path: Option<PathBuf>,
    pub svg_path: Option<PathBuf>,
    pub json_path: Option<PathBuf>,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RootConfig {
    pub activations: Option<Vec<ActivationSpec>>,
    pub moments_override: Option<Vec<Moments>>,
    #[serde(default)]
    pub quadrature: QuadratureConfig,
    pub model: ModelConfig,
    pub lambda: f64,
    #[serde(rename = "F0", default)]
    pub f0: f64,
    #[serde(rename = "F1", default = "one")]
    pub f1: f64,
    #[serde(default)]
    pub tau: f64,
    #[serde(default)]
    pub solver: SolverConfig,
    pub empirical: Option<EmpiricalSection>,
    pub sweep: Option<SweepSection>,
    pub limit: Option<LimitSection>,
    #[serde(default)]
    pub output: OutputConfig,
    /// Moments per component, filled in by validation.
    #[serde(skip)]
    moments: Vec<Moments>,
}

fn pointer(path: &serde_path_to_error::Path) -> String {
    use serde_path_to_error::Segment;
    let mut out = String::new();
    for seg in path.iter() {
        out.push('/');
        match seg {
            Segment::Seq { index } => out.push_str(&index.to_string()),
            Segment::Map { key } => out.push_str(&key.replace('~', "~0").replace('/', "~1")),
            Segment::Enum { variant } => out.push_str(variant),
            Segment::Unknown => out.push('?'),
        }
    }
    if out.is_empty() {
        out.push('/');
    }
    out
}

/// Apply one `key.sub.0=value` override. The value is read as JSON when it
/// parses, otherwise as a bare string.
pub fn apply_override(root: &mut Value, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::config("/", format!("override `{assignment}` is not key=value")))?;
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::config(
            "/",
            format!("override key `{key}` has an empty segment"),
        ));
    }
    let mut cur = root;
    for (i, part) in parts.iter().enumerate() {
        let here = format!("/{}", parts[..=i].join("/"));
        let last = i + 1 == parts.len();
        cur = match cur {
            Value::Object(map) => {
                if last {
                    map.insert(part.to_string(), value);
                    return Ok(());
                }
                map.entry(part.to_string())
                    .or_insert_with(|| Value::Object(Default::default()))
            }
            Value::Array(items) => {
                let idx: usize = part
                    .parse()
                    .map_err(|_| Error::config(&here, "array index expected"))?;
                let len = items.len();
                let slot = items.get_mut(idx).ok_or_else(|| {
                    Error::config(&here, format!("index out of range (length {len})"))
                })?;
                if last {
                    *slot = value;
                    return Ok(());
                }
                slot
            }
            _ => return Err(Error::config(&here, "cannot descend into a scalar")),
        };
    }
    unreachable!("the last segment always returns")
}

/// Parse config text, apply overrides, and validate everything eagerly.
pub fn parse_config(text: &str, overrides: &[String]) -> Result<RootConfig> {
    let mut value: Value = serde_json::from_str(text).map_err(|e| {
        Error::config(
            "/",
            format!(
                "invalid JSON at line {} column {}: {e}",
                e.line(),
                e.column()
            ),
        )
    })?;
    if !value.is_object() {
        return Err(Error::config("/", "top level must be a JSON object"));
    }
    for o in overrides {
        apply_override(&mut value, o)?;
    }
    let mut cfg: RootConfig = serde_path_to_error::deserialize(value).map_err(|e| {
        let path = pointer(e.path());
        Error::config(path, e.into_inner().to_string())
    })?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_config(path: &Path, overrides: &[String]) -> Result<RootConfig> {
    let text =
        std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    parse_config(&text, overrides)
}

fn at(path: &str) -> impl Fn(Error) -> Error + '_ {
    move |e| match e {
        Error::Config { .. } => e,
        other => Error::config(path, other.to_string()),
    }
}

impl RootConfig {
    pub fn k(&self) -> usize {
        self.moments.len()
    }

    /// Moments per component, from the override or by quadrature.
    pub fn moments(&self) -> &[Moments] {
        &self.moments
    }

    fn validate(&mut self) -> Result<()> {
        self.moments = match (&self.activations, &self.moments_override) {
            (Some(_), Some(_)) | (None, None) => {
                return Err(Error::config(
                    "/",
                    "exactly one of `activations` and `moments_override` is required",
                ))
            }
            (Some(acts), None) => {
                if acts.is_empty() {
                    return Err(Error::config(
                        "/activations",
                        "at least one activation is required",
                    ));
                }
                self.quadrature.validate().map_err(at("/quadrature"))?;
                let mut out = Vec::with_capacity(acts.len());
                for (i, a) in acts.iter().enumerate() {
                    a.validate().map_err(at(&format!("/activations/{i}")))?;
                    out.push(compute_moments(a, &self.quadrature)?);
                }
                out
            }
            (None, Some(ms)) => {
                if ms.is_empty() {
                    return Err(Error::config(
                        "/moments_override",
                        "at least one entry is required",
                    ));
                }
                for (i, m) in ms.iter().enumerate() {
                    m.validate()
                        .map_err(at(&format!("/moments_override/{i}")))?;
                }
                ms.clone()
            }
        };
        let k = self.moments.len();

        if !(self.lambda > 0.0) || !self.lambda.is_finite() {
            return Err(Error::config("/lambda", "lambda must be > 0"));
        }
        if !(self.f1 >= 0.0) || !self.f1.is_finite() {
            return Err(Error::config("/F1", "F1 must be >= 0"));
        }
        if !(self.tau >= 0.0) || !self.tau.is_finite() {
            return Err(Error::config("/tau", "tau must be >= 0"));
        }
        if !self.f0.is_finite() {
            return Err(Error::config("/F0", "F0 must be finite"));
        }
        let mu0_sq: f64 = self.moments.iter().map(|m| m.mu0 * m.mu0).sum();
        if self.f0 != 0.0 && !(mu0_sq > MIN_MU0_SQ) {
            return Err(Error::config(
                "/F0",
                "intercept not learnable: F0 != 0 requires sum of mu0^2 > 0 over activations",
            ));
        }
        self.solver.validate().map_err(at("/solver"))?;

        let m = &self.model;
        let ratios = m.psi.is_some() || m.psi_n.is_some();
        let counts = m.d.is_some() || m.n.is_some() || m.n_features.is_some();
        if ratios && counts {
            return Err(Error::config(
                "/model",
                "give either psi/psi_n or d/n/N, not both",
            ));
        }
        if !ratios && !counts {
            return Err(Error::config("/model", "psi/psi_n or d/n/N is required"));
        }
        if ratios {
            let psi_n = m
                .psi_n
                .ok_or_else(|| Error::config("/model/psi_n", "psi_n is required"))?;
            if !(psi_n > 0.0) || !psi_n.is_finite() {
                return Err(Error::config("/model/psi_n", "psi_n must be > 0"));
            }
            if let Some(psi) = &m.psi {
                if psi.len() != k {
                    return Err(Error::config(
                        "/model/psi",
                        format!("{} entries for {k} components", psi.len()),
                    ));
                }
                if let Some(i) = psi.iter().position(|p| !(*p > 0.0) || !p.is_finite()) {
                    return Err(Error::config(format!("/model/psi/{i}"), "psi must be > 0"));
                }
            }
        } else {
            match m.d {
                Some(d) if d >= 1 => {}
                _ => return Err(Error::config("/model/d", "d must be >= 1")),
            }
            match m.n {
                Some(n) if n >= 1 => {}
                _ => return Err(Error::config("/model/n", "n must be >= 1")),
            }
            if let Some(nf) = &m.n_features {
                if nf.len() != k {
                    return Err(Error::config(
                        "/model/N",
                        format!("{} entries for {k} components", nf.len()),
                    ));
                }
                if let Some(i) = nf.iter().position(|v| *v == 0) {
                    return Err(Error::config(
                        format!("/model/N/{i}"),
                        "feature counts must be >= 1",
                    ));
                }
            }
        }
        if let Some(e) = &self.empirical {
            if self.activations.is_none() {
                return Err(Error::config(
                    "/empirical",
                    "simulation needs `activations`",
                ));
            }
            if e.n_test == 0 {
                return Err(Error::config("/empirical/n_test", "n_test must be >= 1"));
            }
            if e.replications == 0 {
                return Err(Error::config(
                    "/empirical/replications",
                    "replications must be >= 1",
                ));
            }
        }
        if self.sweep.is_some() {
            let spec = self.sweep_spec()?;
            expand_grid(&spec).map_err(at("/sweep"))?;
        }
        if self.limit.is_some() {
            self.limit_spec()?;
        }
        Ok(())
    }

    /// `ψ_n`, given directly or as `n/d`.
    pub fn psi_n(&self) -> f64 {
        match (self.model.psi_n, self.model.d, self.model.n) {
            (Some(p), _, _) => p,
            (None, Some(d), Some(n)) => n as f64 / d as f64,
            _ => f64::NAN,
        }
    }

    fn base_spec(&self, psi: Vec<f64>) -> TheorySpec {
        TheorySpec {
            psi,
            psi_n: self.psi_n(),
            moments: self.moments.clone(),
            lambda: self.lambda,
            f1: self.f1,
            tau: self.tau,
            f0: self.f0,
        }
    }

    /// Theory inputs; `ψ_c = N_c/d` when the model is given by counts.
    pub fn theory_spec(&self) -> Result<TheorySpec> {
        let psi = match (&self.model.psi, &self.model.n_features, self.model.d) {
            (Some(p), _, _) => p.clone(),
            (None, Some(nf), Some(d)) => nf.iter().map(|v| *v as f64 / d as f64).collect(),
            _ => return Err(Error::config("/model", "theory needs psi (or d and N)")),
        };
        Ok(self.base_spec(psi))
    }

    /// Simulation inputs; needs the count form of the model.
    pub fn empirical_config(&self) -> Result<EmpiricalConfig> {
        let acts = self
            .activations
            .clone()
            .ok_or_else(|| Error::config("/activations", "simulation needs `activations`"))?;
        let (Some(d), Some(n), Some(nf)) = (self.model.d, self.model.n, &self.model.n_features)
        else {
            return Err(Error::config("/model", "simulation needs d, n and N"));
        };
        let e = self.empirical.clone().unwrap_or_default();
        let cfg = EmpiricalConfig {
            d,
            n,
            n_features: nf.clone(),
            activations: acts,
            lambda: self.lambda,
            f0: self.f0,
            f1: self.f1,
            tau: self.tau,
            n_test: e.n_test,
            replications: e.replications,
            base_seed: e.base_seed,
        };
        cfg.validate().map_err(at("/"))?;
        Ok(cfg)
    }

    pub fn sweep_spec(&self) -> Result<SweepSpec> {
        let s = self
            .sweep
            .as_ref()
            .ok_or_else(|| Error::config("/sweep", "no sweep section"))?;
        let ratios = s.ratios.clone().unwrap_or_else(|| vec![1.0; self.k()]);
        let c_grid = match (&s.c_grid, s.c_start, s.c_stop) {
            (Some(g), None, None) => g.clone(),
            (None, Some(a), Some(b)) => c_range(a, b, s.c_step).map_err(at("/sweep"))?,
            _ => {
                return Err(Error::config(
                    "/sweep",
                    "give either c_grid or both c_start and c_stop",
                ))
            }
        };
        let empirical = if s.empirical {
            let acts = self.activations.clone().ok_or_else(|| {
                Error::config("/sweep/empirical", "simulation needs `activations`")
            })?;
            let (Some(d), Some(n)) = (self.model.d, self.model.n) else {
                return Err(Error::config(
                    "/sweep/empirical",
                    "simulation needs model d and n",
                ));
            };
            let e = self.empirical.clone().unwrap_or_default();
            Some(EmpiricalTemplate {
                d,
                n,
                activations: acts,
                n_test: e.n_test,
                replications: e.replications,
                base_seed: e.base_seed,
            })
        } else {
            None
        };
        Ok(SweepSpec {
            base: self.base_spec(vec![1.0; self.k()]),
            ratios,
            c_grid,
            empirical,
        })
    }

    pub fn svg_options(&self) -> SvgOptions {
        self.sweep.as_ref().map(|s| s.svg).unwrap_or_default()
    }

    pub fn limit_spec(&self) -> Result<LimitSpec> {
        let l = self
            .limit
            .as_ref()
            .ok_or_else(|| Error::config("/limit", "no limit section"))?;
        if self.k() != 2 {
            return Err(Error::config(
                "/limit",
                format!("needs 2 components, got {}", self.k()),
            ));
        }
        if !(l.r1 > 0.0) || !(l.r2 > 0.0) {
            return Err(Error::config("/limit", "r1 and r2 must be > 0"));
        }
        let psi3 = l.psi3.unwrap_or_else(|| self.psi_n());
        if !(psi3 > 0.0) {
            return Err(Error::config("/limit/psi3", "psi3 must be > 0"));
        }
        Ok(LimitSpec {
            r1: l.r1,
            r2: l.r2,
            psi3,
            moments: [self.moments[0], self.moments[1]],
            f1: self.f1,
            tau: self.tau,
        })
    }
}
