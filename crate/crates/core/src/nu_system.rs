//! The self-consistent ν-system evaluated at `ξ = √λ·i`.
//!
//! At that point every solution component is purely imaginary, `ν_j = i·b_j`
//! with `b_j > 0`, and the complex system collapses to a real one:
//!
//! ```text
//! √λ·b_c + μ_{c,2}²·b_c·b_{K+1} + μ_{c,1}²·b_c·b_{K+1}/(1+T) = ψ_c        c = 1..K
//! √λ·b_{K+1} + Σ_c μ_{c,2}²·b_c·b_{K+1} + Σ_c μ_{c,1}²·b_c·b_{K+1}/(1+T) = ψ_{K+1}
//! T = Σ_s μ_{s,1}²·b_s·b_{K+1}
//! ```
//!
//! [`solve_nu`] runs a damped fixed-point iteration on `b_j = ψ_j / den_j(b)`
//! and walks λ down from a large starting value so that the iteration stays
//! on the branch that decays like `ψ_j/|ξ|` at infinity.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::activation::Moments;
use crate::error::{Error, Result};

/// Below this `Σμ0²` the intercept counts as unlearnable (quadrature noise on
/// odd activations sits far beneath it).
pub const MIN_MU0_SQ: f64 = 1e-14;

const NEWTON_STEPS: usize = 4;

/// An asymptotic problem instance with `K = psi.len()` activation blocks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TheorySpec {
    /// Width ratios `ψ_c = N_c/d`, one per activation.
    pub psi: Vec<f64>,
    /// Sample ratio `ψ_{K+1} = n/d`.
    pub psi_n: f64,
    pub moments: Vec<Moments>,
    pub lambda: f64,
    #[serde(rename = "F1")]
    pub f1: f64,
    pub tau: f64,
    #[serde(rename = "F0", default)]
    pub f0: f64,
}

impl TheorySpec {
    pub fn k(&self) -> usize {
        self.psi.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.psi.is_empty() {
            return Err(Error::InvalidSpec(
                "at least one activation block is required".into(),
            ));
        }
        if self.moments.len() != self.psi.len() {
            return Err(Error::InvalidSpec(format!(
                "{} moment triples for {} width ratios",
                self.moments.len(),
                self.psi.len()
            )));
        }
        if !(self.lambda > 0.0) || !self.lambda.is_finite() {
            return Err(Error::InvalidSpec("lambda must be > 0".into()));
        }
        for (c, &p) in self.psi.iter().enumerate() {
            if !(p > 0.0) || !p.is_finite() {
                return Err(Error::InvalidSpec(format!("psi[{c}] must be > 0, got {p}")));
            }
        }
        if !(self.psi_n > 0.0) || !self.psi_n.is_finite() {
            return Err(Error::InvalidSpec("psi_n must be > 0".into()));
        }
        for m in &self.moments {
            m.validate()?;
        }
        if !(self.f1 >= 0.0) || !(self.tau >= 0.0) || !self.f0.is_finite() {
            return Err(Error::InvalidSpec(
                "F1 and tau must be >= 0, F0 finite".into(),
            ));
        }
        Ok(())
    }

    /// A nonzero intercept is only learnable when some activation has a
    /// nonzero mean.
    pub fn check_intercept_learnable(&self) -> Result<()> {
        let s: f64 = self.moments.iter().map(|m| m.mu0 * m.mu0).sum();
        if self.f0 != 0.0 && !(s > MIN_MU0_SQ) {
            return Err(Error::InvalidSpec(
                "intercept not learnable: F0 != 0 requires sum of mu0^2 > 0 over activations"
                    .into(),
            ));
        }
        Ok(())
    }

    /// `(ψ_1, …, ψ_K, ψ_{K+1})`.
    pub fn all_psi(&self) -> Vec<f64> {
        let mut v = self.psi.clone();
        v.push(self.psi_n);
        v
    }
}

/// Imaginary parts of the ν-system solution at `ξ = √λ·i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NuStar {
    pub b: Vec<f64>,
    /// Max relative residual `|res_j|/ψ_j` at the returned point.
    pub residual: f64,
    pub iterations: usize,
    pub lambda_path: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    #[serde(default = "SolverConfig::default_tol")]
    pub tol: f64,
    #[serde(default = "SolverConfig::default_max_iter")]
    pub max_iter: usize,
    #[serde(default = "SolverConfig::default_damping")]
    pub damping: f64,
    /// `None` means `max(λ, 1)`.
    #[serde(default)]
    pub continuation_start: Option<f64>,
    #[serde(default = "SolverConfig::default_factor")]
    pub continuation_factor: f64,
}

impl SolverConfig {
    fn default_tol() -> f64 {
        1e-12
    }
    fn default_max_iter() -> usize {
        100_000
    }
    fn default_damping() -> f64 {
        0.5
    }
    fn default_factor() -> f64 {
        0.5
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) {
            return Err(Error::InvalidSpec("solver tol must be > 0".into()));
        }
        if !(self.damping > 0.0 && self.damping <= 1.0) {
            return Err(Error::InvalidSpec(
                "solver damping must be in (0, 1]".into(),
            ));
        }
        if !(self.continuation_factor > 0.0 && self.continuation_factor < 1.0) {
            return Err(Error::InvalidSpec(
                "continuation_factor must be in (0, 1)".into(),
            ));
        }
        if let Some(s) = self.continuation_start {
            if !(s > 0.0) || !s.is_finite() {
                return Err(Error::InvalidSpec("continuation_start must be > 0".into()));
            }
        }
        if self.max_iter == 0 {
            return Err(Error::InvalidSpec("max_iter must be >= 1".into()));
        }
        Ok(())
    }
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            tol: Self::default_tol(),
            max_iter: Self::default_max_iter(),
            damping: Self::default_damping(),
            continuation_start: None,
            continuation_factor: Self::default_factor(),
        }
    }
}

/// Bracket factors `den_j(b)` such that equation j reads `b_j·den_j = ψ_j`.
fn denominators(spec: &TheorySpec, sqrt_lambda: f64, b: &[f64], out: &mut [f64]) {
    let k = spec.k();
    let bn = b[k];
    let mut lin = 0.0; // Σ μ_{c,1}² b_c
    let mut nonlin = 0.0; // Σ μ_{c,2}² b_c
    for (m, &bc) in spec.moments.iter().zip(&b[..k]) {
        lin += m.mu1_sq() * bc;
        nonlin += m.mu2_sq * bc;
    }
    let one_plus_t = 1.0 + lin * bn;
    for (c, m) in spec.moments.iter().enumerate() {
        out[c] = sqrt_lambda + m.mu2_sq * bn + m.mu1_sq() * bn / one_plus_t;
    }
    out[k] = sqrt_lambda + nonlin + lin / one_plus_t;
}

fn check_b(spec: &TheorySpec, b: &[f64]) -> Result<()> {
    if b.len() != spec.k() + 1 {
        return Err(Error::ShapeMismatch(format!(
            "b has {} entries, expected {}",
            b.len(),
            spec.k() + 1
        )));
    }
    for (index, &value) in b.iter().enumerate() {
        if !(value > 0.0) {
            return Err(Error::NonPositiveInput { index, value });
        }
    }
    Ok(())
}

/// Left side minus right side of the real ν-system, in absolute terms.
pub fn residual_vector(spec: &TheorySpec, b: &[f64]) -> Result<Vec<f64>> {
    check_b(spec, b)?;
    let mut den = vec![0.0; b.len()];
    denominators(spec, spec.lambda.sqrt(), b, &mut den);
    Ok(b.iter()
        .zip(&den)
        .zip(spec.all_psi())
        .map(|((bj, dj), pj)| bj * dj - pj)
        .collect())
}

/// Max over j of `|res_j| / ψ_j`.
pub fn relative_residual(spec: &TheorySpec, b: &[f64]) -> Result<f64> {
    let r = residual_vector(spec, b)?;
    Ok(r.iter()
        .zip(spec.all_psi())
        .map(|(r, p)| r.abs() / p)
        .fold(0.0, f64::max))
}

/// One damped update `b ← (1−γ)·b + γ·ψ/den(b)` at the given λ.
pub fn damped_step(spec: &TheorySpec, lambda: f64, damping: f64, b: &[f64]) -> Result<Vec<f64>> {
    check_b(spec, b)?;
    let mut den = vec![0.0; b.len()];
    denominators(spec, lambda.sqrt(), b, &mut den);
    Ok(b.iter()
        .zip(&den)
        .zip(spec.all_psi())
        .map(|((bj, dj), pj)| (1.0 - damping) * bj + damping * pj / dj)
        .collect())
}

/// Continuation schedule from `start` down to `target` (inclusive).
fn lambda_schedule(target: f64, cfg: &SolverConfig) -> Vec<f64> {
    let start = cfg.continuation_start.unwrap_or(target.max(1.0));
    if start <= target {
        return vec![target];
    }
    let mut path = vec![start];
    let mut l = start;
    loop {
        l *= cfg.continuation_factor;
        if l <= target {
            path.push(target);
            break;
        }
        path.push(l);
    }
    path
}

/// Damped fixed-point iteration at a single λ, in place. Returns
/// `(iterations, final relative residual)`.
fn iterate_at(
    spec: &TheorySpec,
    lambda: f64,
    cfg: &SolverConfig,
    b: &mut [f64],
) -> Result<(usize, f64)> {
    let psi = spec.all_psi();
    let sl = lambda.sqrt();
    let gamma = cfg.damping;
    let mut den = vec![0.0; b.len()];
    for it in 0..=cfg.max_iter {
        denominators(spec, sl, b, &mut den);
        let mut res = 0.0f64;
        for j in 0..b.len() {
            res = res.max((b[j] * den[j] - psi[j]).abs() / psi[j]);
        }
        if res <= cfg.tol {
            return Ok((it, res));
        }
        if it == cfg.max_iter || !res.is_finite() {
            return Err(Error::NoConvergence {
                residual: res,
                iterations: it,
                lambda,
            });
        }
        for j in 0..b.len() {
            b[j] = (1.0 - gamma) * b[j] + gamma * psi[j] / den[j];
        }
    }
    unreachable!("loop returns on its last iteration")
}

/// Jacobian of `b ↦ b_j·den_j(b) − ψ_j`.
fn jacobian(spec: &TheorySpec, sqrt_lambda: f64, b: &[f64]) -> DMatrix<f64> {
    let k = spec.k();
    let bn = b[k];
    let mut den = vec![0.0; k + 1];
    denominators(spec, sqrt_lambda, b, &mut den);
    let lin: f64 = spec
        .moments
        .iter()
        .zip(&b[..k])
        .map(|(m, bc)| m.mu1_sq() * bc)
        .sum();
    let u = 1.0 + lin * bn;
    let u2 = u * u;
    let mut j = DMatrix::<f64>::zeros(k + 1, k + 1);
    for (c, mc) in spec.moments.iter().enumerate() {
        for (e, me) in spec.moments.iter().enumerate() {
            j[(c, e)] = -b[c] * mc.mu1_sq() * me.mu1_sq() * bn * bn / u2;
        }
        j[(c, c)] += den[c];
        j[(c, k)] = b[c] * (mc.mu2_sq + mc.mu1_sq() / u2);
        j[(k, c)] = bn * (mc.mu2_sq + mc.mu1_sq() / u2);
    }
    j[(k, k)] = den[k] - bn * lin * lin / u2;
    j
}

/// A few guarded Newton steps on a converged point. A step is kept only if
/// it stays positive and lowers the relative residual.
fn newton_polish(spec: &TheorySpec, b: &mut Vec<f64>, mut residual: f64) -> f64 {
    let sl = spec.lambda.sqrt();
    for _ in 0..NEWTON_STEPS {
        if residual == 0.0 {
            break;
        }
        let Ok(r) = residual_vector(spec, b) else {
            break;
        };
        let Some(step) = jacobian(spec, sl, b).lu().solve(&DVector::from_vec(r)) else {
            break;
        };
        let trial: Vec<f64> = b.iter().zip(step.iter()).map(|(x, d)| x - d).collect();
        match relative_residual(spec, &trial) {
            Ok(t) if t < residual => {
                *b = trial;
                residual = t;
            }
            _ => break,
        }
    }
    residual
}

/// Solve the ν-system by λ-continuation from a large starting value.
pub fn solve_nu(spec: &TheorySpec, cfg: &SolverConfig) -> Result<NuStar> {
    spec.validate()?;
    cfg.validate()?;
    let path = lambda_schedule(spec.lambda, cfg);
    // ψ_j/√λ₀ is the exact solution for vanishing moments and an upper
    // bound in general; it sits on the decaying branch for large λ₀.
    let sl0 = path[0].sqrt();
    let mut b: Vec<f64> = spec.all_psi().iter().map(|p| p / sl0).collect();
    let mut iterations = 0;
    let mut residual = f64::INFINITY;
    for &l in &path {
        let (it, r) = iterate_at(spec, l, cfg, &mut b).map_err(|e| match e {
            Error::NoConvergence {
                residual,
                iterations: it,
                lambda,
            } => Error::NoConvergence {
                residual,
                iterations: iterations + it,
                lambda,
            },
            other => other,
        })?;
        iterations += it;
        residual = r;
    }
    let residual = newton_polish(spec, &mut b, residual);
    Ok(NuStar {
        b,
        residual,
        iterations,
        lambda_path: path,
    })
}

/// Solve directly at the target λ starting from `initial` (no continuation).
/// Used for warm starts along a sweep grid.
pub fn solve_nu_from(spec: &TheorySpec, cfg: &SolverConfig, initial: &[f64]) -> Result<NuStar> {
    spec.validate()?;
    cfg.validate()?;
    check_b(spec, initial)?;
    let mut b = initial.to_vec();
    let (iterations, residual) = iterate_at(spec, spec.lambda, cfg, &mut b)?;
    let residual = newton_polish(spec, &mut b, residual);
    Ok(NuStar {
        b,
        residual,
        iterations,
        lambda_path: vec![spec.lambda],
    })
}

/// Plug `ν_j = i·b_j` and `ξ = √λ·i` into the complex ν-system as written and
/// return the largest absolute residual.
pub fn verify_complex(spec: &TheorySpec, nu: &NuStar) -> f64 {
    let k = spec.k();
    let i = Complex64::i();
    let xi = i * spec.lambda.sqrt();
    let v: Vec<Complex64> = nu.b.iter().map(|&b| i * b).collect();
    let vn = v[k];
    let mut coupling = Complex64::new(0.0, 0.0);
    let mut lin = Complex64::new(0.0, 0.0);
    let mut nonlin = Complex64::new(0.0, 0.0);
    for (m, &vc) in spec.moments.iter().zip(&v[..k]) {
        coupling += m.mu1_sq() * vc * vn;
        lin += m.mu1_sq() * vc;
        nonlin += m.mu2_sq * vc;
    }
    let denom = Complex64::new(1.0, 0.0) - coupling;
    let mut worst = 0.0f64;
    for (c, m) in spec.moments.iter().enumerate() {
        let lhs = v[c] * (-xi - m.mu2_sq * vn - m.mu1_sq() * vn / denom);
        worst = worst.max((lhs - spec.psi[c]).norm());
    }
    let lhs = vn * (-xi - nonlin - lin / denom);
    worst.max((lhs - spec.psi_n).norm())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn spec1(mu1_sq: f64, mu2_sq: f64) -> TheorySpec {
        TheorySpec {
            psi: vec![1.0],
            psi_n: 1.0,
            moments: vec![Moments::new(0.0, mu1_sq.sqrt(), mu2_sq)],
            lambda: 1.0,
            f1: 1.0,
            tau: 0.0,
            f0: 0.0,
        }
    }

    fn golden() -> f64 {
        (5f64.sqrt() - 1.0) / 2.0
    }

    /// Real root of r³ + r − 1 = 0 by bisection.
    fn cubic_root() -> f64 {
        let (mut lo, mut hi) = (0.0f64, 1.0f64);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid * mid * mid + mid - 1.0 > 0.0 {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn residual_vanishes_at_golden_ratio() {
        let s = spec1(0.0, 1.0);
        let r = residual_vector(&s, &[golden(), golden()]).unwrap();
        for v in r {
            assert!(v.abs() < 1e-12);
        }
    }

    #[test]
    fn residual_nonnegative_at_upper_bound() {
        let s = TheorySpec {
            psi: vec![0.7, 2.0],
            psi_n: 1.3,
            moments: vec![Moments::new(0.1, 0.8, 0.3), Moments::new(0.0, 0.2, 1.1)],
            lambda: 0.04,
            f1: 1.0,
            tau: 0.1,
            f0: 0.0,
        };
        let b: Vec<f64> = s.all_psi().iter().map(|p| p / s.lambda.sqrt()).collect();
        for v in residual_vector(&s, &b).unwrap() {
            assert!(v >= 0.0);
        }
    }

    #[test]
    fn decoupled_zero_moment_system() {
        let s = TheorySpec {
            psi: vec![1.0, 2.0],
            psi_n: 3.0,
            moments: vec![Moments::ZERO; 2],
            lambda: 4.0,
            f1: 1.0,
            tau: 0.0,
            f0: 0.0,
        };
        let r = residual_vector(&s, &[0.5, 1.0, 1.5]).unwrap();
        assert_eq!(r, vec![0.0, 0.0, 0.0]);
        let nu = solve_nu(&s, &SolverConfig::default()).unwrap();
        assert_abs_diff_eq!(nu.b[0], 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(nu.b[1], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(nu.b[2], 1.5, epsilon = 1e-12);
        assert!(verify_complex(&s, &nu) < 1e-14);
    }

    #[test]
    fn rejects_nonpositive_b() {
        let s = spec1(0.0, 1.0);
        assert!(matches!(
            residual_vector(&s, &[0.5, 0.0]),
            Err(Error::NonPositiveInput { index: 1, .. })
        ));
    }

    #[test]
    fn golden_and_cubic_solutions() {
        let nu = solve_nu(&spec1(0.0, 1.0), &SolverConfig::default()).unwrap();
        assert_abs_diff_eq!(nu.b[0], golden(), epsilon = 1e-10);
        assert_abs_diff_eq!(nu.b[1], golden(), epsilon = 1e-10);

        let s = spec1(1.0, 0.0);
        let nu = solve_nu(&s, &SolverConfig::default()).unwrap();
        let r = cubic_root();
        assert_abs_diff_eq!(r, 0.682_327_8, epsilon = 1e-7);
        assert_abs_diff_eq!(nu.b[0], r, epsilon = 1e-10);
        assert_abs_diff_eq!(nu.b[1], r, epsilon = 1e-10);
        assert!(verify_complex(&s, &nu) < 1e-10);
    }

    #[test]
    fn perturbation_shows_in_complex_check() {
        let s = spec1(1.0, 0.0);
        let mut nu = solve_nu(&s, &SolverConfig::default()).unwrap();
        nu.b[0] += 0.1;
        assert!(verify_complex(&s, &nu) > 1e-3);
    }

    #[test]
    fn invalid_lambda() {
        let mut s = spec1(1.0, 0.0);
        s.lambda = 0.0;
        assert!(matches!(
            solve_nu(&s, &SolverConfig::default()),
            Err(Error::InvalidSpec(_))
        ));
    }

    #[test]
    fn iteration_budget_exhausted() {
        let mut s = spec1(1.0, 1.0);
        s.lambda = 1e-6;
        let cfg = SolverConfig {
            max_iter: 3,
            ..Default::default()
        };
        assert!(matches!(
            solve_nu(&s, &cfg),
            Err(Error::NoConvergence { .. })
        ));
    }

    #[test]
    fn schedule_ends_at_target() {
        let cfg = SolverConfig::default();
        let p = lambda_schedule(1e-3, &cfg);
        assert_eq!(p[0], 1.0);
        assert_eq!(*p.last().unwrap(), 1e-3);
        assert!(p.windows(2).all(|w| w[1] < w[0]));
        assert_eq!(lambda_schedule(5.0, &cfg), vec![5.0]);
    }

    #[test]
    fn warm_start_reaches_same_point() {
        let mut s = spec1(0.6, 0.4);
        s.lambda = 1e-3;
        let cold = solve_nu(&s, &SolverConfig::default()).unwrap();
        let start: Vec<f64> = cold.b.iter().map(|b| b * 1.3).collect();
        let warm = solve_nu_from(&s, &SolverConfig::default(), &start).unwrap();
        for (a, b) in cold.b.iter().zip(&warm.b) {
            assert!((a - b).abs() <= 1e-9 * a);
        }
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let spec = TheorySpec {
            psi: vec![0.7, 1.3],
            psi_n: 2.0,
            moments: vec![Moments::new(0.1, 1.2, 0.4), Moments::new(0.0, 0.3, 0.9)],
            lambda: 0.05,
            f1: 1.0,
            tau: 0.0,
            f0: 0.0,
        };
        let b = [0.8, 1.1, 0.6];
        let j = jacobian(&spec, spec.lambda.sqrt(), &b);
        let h = 1e-6;
        for e in 0..3 {
            let (mut up, mut dn) = (b, b);
            up[e] += h;
            dn[e] -= h;
            let fu = residual_vector(&spec, &up).unwrap();
            let fd = residual_vector(&spec, &dn).unwrap();
            for r in 0..3 {
                assert_abs_diff_eq!(j[(r, e)], (fu[r] - fd[r]) / (2.0 * h), epsilon = 1e-8);
            }
        }
    }
}
