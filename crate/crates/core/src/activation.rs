//! Scalar activations and their Gaussian ("spherical") moments.
//!
//! The asymptotic theory only sees an activation through three numbers:
//! `mu0 = E σ(G)`, `mu1 = E G σ(G)` and `mu2_sq = E σ(G)² − mu0² − mu1²`
//! for `G ~ N(0, 1)`. They are computed here by composite Gauss-Legendre
//! quadrature against the explicit normal density, with a panel boundary
//! at the origin so the ReLU family (kinked at 0) is integrated exactly
//! piecewise.

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{Error, Result};

/// Clamp threshold for `mu2_sq`: values below `-MU2_CLAMP_TOL` indicate a
/// quadrature problem rather than rounding.
pub const MU2_CLAMP_TOL: f64 = 1e-10;

/// Refinement check threshold used by [`compute_moments`].
pub const REFINEMENT_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ActivationKind {
    Relu,
    Step,
    Elu,
    Sigmoid,
    Tanh,
    Sin,
    Cos,
    Identity,
    Constant,
}

impl ActivationKind {
    pub const ALL: [ActivationKind; 9] = [
        ActivationKind::Relu,
        ActivationKind::Step,
        ActivationKind::Elu,
        ActivationKind::Sigmoid,
        ActivationKind::Tanh,
        ActivationKind::Sin,
        ActivationKind::Cos,
        ActivationKind::Identity,
        ActivationKind::Constant,
    ];

    /// Unscaled nonlinearity.
    pub fn base(self, u: f64) -> f64 {
        match self {
            ActivationKind::Relu => u.max(0.0),
            ActivationKind::Step => {
                if u > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            ActivationKind::Elu => {
                if u >= 0.0 {
                    u
                } else {
                    u.exp_m1()
                }
            }
            ActivationKind::Sigmoid => {
                if u >= 0.0 {
                    1.0 / (1.0 + (-u).exp())
                } else {
                    let e = u.exp();
                    e / (1.0 + e)
                }
            }
            ActivationKind::Tanh => u.tanh(),
            ActivationKind::Sin => u.sin(),
            ActivationKind::Cos => u.cos(),
            ActivationKind::Identity => u,
            ActivationKind::Constant => 1.0,
        }
    }

    /// Points where the base function is not smooth.
    fn kinks(self) -> &'static [f64] {
        match self {
            ActivationKind::Relu | ActivationKind::Step | ActivationKind::Elu => &[0.0],
            _ => &[],
        }
    }
}

fn one() -> f64 {
    1.0
}

/// `x ↦ out_scale · base(in_scale · x) + shift`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ActivationSpec {
    pub kind: ActivationKind,
    #[serde(default = "one")]
    pub in_scale: f64,
    #[serde(default = "one")]
    pub out_scale: f64,
    #[serde(default)]
    pub shift: f64,
}

impl ActivationSpec {
    pub fn new(kind: ActivationKind) -> Self {
        Self {
            kind,
            in_scale: 1.0,
            out_scale: 1.0,
            shift: 0.0,
        }
    }

    pub fn scaled(kind: ActivationKind, in_scale: f64, out_scale: f64) -> Self {
        Self {
            kind,
            in_scale,
            out_scale,
            shift: 0.0,
        }
    }

    pub fn with_shift(mut self, shift: f64) -> Self {
        self.shift = shift;
        self
    }

    #[inline]
    pub fn eval(&self, x: f64) -> f64 {
        eval_activation(self, x)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("in_scale", self.in_scale),
            ("out_scale", self.out_scale),
            ("shift", self.shift),
        ] {
            if !v.is_finite() {
                return Err(Error::InvalidSpec(format!(
                    "activation {name} must be finite"
                )));
            }
        }
        Ok(())
    }

    /// Kink locations in the argument `x` (before `in_scale`).
    fn kinks_in_x(&self) -> Vec<f64> {
        if self.in_scale == 0.0 {
            return Vec::new();
        }
        self.kind
            .kinks()
            .iter()
            .map(|k| k / self.in_scale)
            .collect()
    }
}

#[inline]
pub fn eval_activation(act: &ActivationSpec, x: f64) -> f64 {
    act.out_scale * act.kind.base(act.in_scale * x) + act.shift
}

/// Spherical moments of one activation. `mu2_sq` is the residual nonlinear
/// variance and is never negative.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Moments {
    pub mu0: f64,
    pub mu1: f64,
    pub mu2_sq: f64,
}

impl Moments {
    pub const ZERO: Moments = Moments {
        mu0: 0.0,
        mu1: 0.0,
        mu2_sq: 0.0,
    };

    pub fn new(mu0: f64, mu1: f64, mu2_sq: f64) -> Self {
        Self { mu0, mu1, mu2_sq }
    }

    /// `μ₁²`, the quantity the theory actually consumes.
    #[inline]
    pub fn mu1_sq(&self) -> f64 {
        self.mu1 * self.mu1
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.mu0.is_finite() && self.mu1.is_finite() && self.mu2_sq.is_finite()) {
            return Err(Error::InvalidSpec("moments must be finite".into()));
        }
        if self.mu2_sq < 0.0 {
            return Err(Error::InvalidSpec(format!(
                "mu2_sq must be >= 0, got {}",
                self.mu2_sq
            )));
        }
        Ok(())
    }
}

/// Moments of `x ↦ a·σ(x)` given the moments of `σ`.
pub fn scaled_moments(m: Moments, a: f64) -> Moments {
    Moments {
        mu0: a * m.mu0,
        mu1: a * m.mu1,
        mu2_sq: a * a * m.mu2_sq,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QuadratureConfig {
    pub panel_count: usize,
    pub truncation: f64,
    pub nodes_per_panel: usize,
}

impl Default for QuadratureConfig {
    fn default() -> Self {
        Self {
            panel_count: 48,
            truncation: 12.0,
            nodes_per_panel: 64,
        }
    }
}

impl QuadratureConfig {
    pub fn validate(&self) -> Result<()> {
        if self.panel_count == 0 || self.nodes_per_panel == 0 {
            return Err(Error::InvalidQuadrature(
                "panel_count and nodes_per_panel must be >= 1".into(),
            ));
        }
        if !(self.truncation >= 8.0) || !self.truncation.is_finite() {
            return Err(Error::InvalidQuadrature(format!(
                "truncation must be >= 8, got {}",
                self.truncation
            )));
        }
        Ok(())
    }
}

/// Gauss-Legendre nodes and weights on [-1, 1], by Newton iteration on the
/// three-term recurrence.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        // Tricomi initial guess
        let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre_with_derivative(n, x);
        if d != 0.0 {
            dp = d;
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }
    (nodes, weights)
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Raw Gaussian integrals `(E σ, E Gσ, E σ²)` on the truncated interval.
fn gaussian_integrals(
    act: &ActivationSpec,
    quad: &QuadratureConfig,
    nodes_per_panel: usize,
) -> [f64; 3] {
    let t = quad.truncation;
    let mut breaks: Vec<f64> = (0..=quad.panel_count)
        .map(|i| -t + 2.0 * t * i as f64 / quad.panel_count as f64)
        .collect();
    breaks.push(0.0);
    breaks.extend(act.kinks_in_x().into_iter().filter(|k| k.abs() < t));
    breaks.sort_by(|a, b| a.total_cmp(b));
    breaks.dedup_by(|a, b| (*a - *b).abs() < 1e-14);

    let (xs, ws) = gauss_legendre(nodes_per_panel);
    let norm = 1.0 / (2.0 * PI).sqrt();
    let mut acc = [0.0; 3];
    for win in breaks.windows(2) {
        let (a, b) = (win[0], win[1]);
        let half = 0.5 * (b - a);
        let mid = 0.5 * (b + a);
        let mut panel = [0.0; 3];
        for (x, w) in xs.iter().zip(&ws) {
            let g = mid + half * x;
            let dens = norm * (-0.5 * g * g).exp();
            let s = act.eval(g);
            let wd = w * dens;
            panel[0] += wd * s;
            panel[1] += wd * g * s;
            panel[2] += wd * s * s;
        }
        for k in 0..3 {
            acc[k] += half * panel[k];
        }
    }
    acc
}

/// Moments together with the value of `mu2_sq` before clamping.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MomentEstimate {
    pub moments: Moments,
    pub mu2_sq_unclamped: f64,
}

fn assemble(raw: [f64; 3]) -> MomentEstimate {
    let [mu0, mu1, second] = raw;
    let mu2 = second - mu0 * mu0 - mu1 * mu1;
    MomentEstimate {
        moments: Moments {
            mu0,
            mu1,
            mu2_sq: mu2.max(0.0),
        },
        mu2_sq_unclamped: mu2,
    }
}

/// Moments plus the unclamped residual variance. Fails with
/// `QuadratureDiverged` if doubling the nodes per panel moves any moment by
/// more than [`REFINEMENT_TOL`].
pub fn estimate_moments(act: &ActivationSpec, quad: &QuadratureConfig) -> Result<MomentEstimate> {
    act.validate()?;
    quad.validate()?;
    let coarse = assemble(gaussian_integrals(act, quad, quad.nodes_per_panel));
    let fine = assemble(gaussian_integrals(act, quad, 2 * quad.nodes_per_panel));
    let pairs = [
        ("mu0", coarse.moments.mu0, fine.moments.mu0),
        ("mu1", coarse.moments.mu1, fine.moments.mu1),
        ("mu2_sq", coarse.mu2_sq_unclamped, fine.mu2_sq_unclamped),
    ];
    for (moment, a, b) in pairs {
        let delta = (a - b).abs();
        if !(delta <= REFINEMENT_TOL) {
            return Err(Error::QuadratureDiverged { moment, delta });
        }
    }
    if coarse.mu2_sq_unclamped < -MU2_CLAMP_TOL {
        return Err(Error::QuadratureDiverged {
            moment: "mu2_sq",
            delta: -coarse.mu2_sq_unclamped,
        });
    }
    Ok(coarse)
}

pub fn compute_moments(act: &ActivationSpec, quad: &QuadratureConfig) -> Result<Moments> {
    estimate_moments(act, quad).map(|e| e.moments)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

    #[test]
    fn eval_examples() {
        let relu = ActivationSpec::new(ActivationKind::Relu);
        assert_eq!(relu.eval(-2.0), 0.0);
        let elu3 = ActivationSpec::scaled(ActivationKind::Elu, 3.0, 1.0);
        assert_eq!(elu3.eval(0.0), 0.0);
        let step = ActivationSpec::new(ActivationKind::Step);
        assert_eq!(step.eval(0.5), 1.0);
        assert_eq!(step.eval(0.0), 0.0);
    }

    #[test]
    fn eval_applies_scales_and_shift() {
        for kind in ActivationKind::ALL {
            let act = ActivationSpec::scaled(kind, 1.7, -0.3).with_shift(0.25);
            for &x in &[-3.0, -0.2, 0.0, 0.4, 2.5] {
                let want = -0.3 * kind.base(1.7 * x) + 0.25;
                assert_eq!(act.eval(x), want);
            }
        }
    }

    #[test]
    fn elu_negative_branch() {
        let elu = ActivationSpec::new(ActivationKind::Elu);
        assert_abs_diff_eq!(elu.eval(-1.0), (-1.0f64).exp() - 1.0, epsilon = 1e-16);
        assert_eq!(elu.eval(2.0), 2.0);
    }

    #[test]
    fn sigmoid_is_stable_far_out() {
        let s = ActivationSpec::new(ActivationKind::Sigmoid);
        assert_eq!(s.eval(-800.0), 0.0);
        assert_eq!(s.eval(800.0), 1.0);
        assert_eq!(s.eval(0.0), 0.5);
    }

    #[test]
    fn gauss_legendre_integrates_polynomials() {
        let (x, w) = gauss_legendre(7);
        let total: f64 = w.iter().sum();
        assert_abs_diff_eq!(total, 2.0, epsilon = 1e-14);
        // degree 12 is exact for 7 nodes
        let i12: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(12)).sum();
        assert_abs_diff_eq!(i12, 2.0 / 13.0, epsilon = 1e-14);
    }

    #[test]
    fn relu_and_step_closed_form() {
        let q = QuadratureConfig::default();
        let relu = compute_moments(&ActivationSpec::new(ActivationKind::Relu), &q).unwrap();
        assert_abs_diff_eq!(relu.mu0, INV_SQRT_2PI, epsilon = 1e-12);
        assert_abs_diff_eq!(relu.mu1, 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(relu.mu2_sq, 0.25 - 1.0 / (2.0 * PI), epsilon = 1e-12);

        let step = compute_moments(&ActivationSpec::new(ActivationKind::Step), &q).unwrap();
        assert_abs_diff_eq!(step.mu0, 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(step.mu1, INV_SQRT_2PI, epsilon = 1e-12);
        assert_abs_diff_eq!(step.mu2_sq, 0.25 - 1.0 / (2.0 * PI), epsilon = 1e-12);
    }

    #[test]
    fn identity_and_constant() {
        let q = QuadratureConfig::default();
        let id = compute_moments(&ActivationSpec::new(ActivationKind::Identity), &q).unwrap();
        assert_abs_diff_eq!(id.mu0, 0.0, epsilon = 1e-14);
        assert_abs_diff_eq!(id.mu1, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(id.mu2_sq, 0.0, epsilon = 1e-12);

        let c = ActivationSpec::scaled(ActivationKind::Constant, 1.0, 2.5);
        let m = compute_moments(&c, &q).unwrap();
        assert_abs_diff_eq!(m.mu0, 2.5, epsilon = 1e-12);
        assert_abs_diff_eq!(m.mu1, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(m.mu2_sq, 0.0, epsilon = 1e-11);
    }

    #[test]
    fn scaled_moments_examples() {
        let m = Moments::new(0.5, 0.4, 0.09);
        let s = scaled_moments(m, 2.0);
        assert_abs_diff_eq!(s.mu0, 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(s.mu1, 0.8, epsilon = 1e-15);
        assert_abs_diff_eq!(s.mu2_sq, 0.36, epsilon = 1e-15);
        assert_eq!(scaled_moments(m, 1.0), m);
        let z = scaled_moments(Moments::new(INV_SQRT_2PI, 0.5, 0.09), 0.0);
        assert_eq!((z.mu0, z.mu1, z.mu2_sq), (0.0, 0.0, 0.0));
    }

    #[test]
    fn invalid_quadrature_rejected() {
        let act = ActivationSpec::new(ActivationKind::Relu);
        let bad = QuadratureConfig {
            truncation: 4.0,
            ..Default::default()
        };
        assert!(matches!(
            compute_moments(&act, &bad),
            Err(Error::InvalidQuadrature(_))
        ));
        let bad = QuadratureConfig {
            panel_count: 0,
            ..Default::default()
        };
        assert!(compute_moments(&act, &bad).is_err());
    }

    #[test]
    fn too_coarse_rule_diverges() {
        // one node per panel over 2 panels cannot resolve sin(40x)
        let act = ActivationSpec::scaled(ActivationKind::Sin, 40.0, 1.0);
        let q = QuadratureConfig {
            panel_count: 2,
            truncation: 12.0,
            nodes_per_panel: 1,
        };
        assert!(matches!(
            compute_moments(&act, &q),
            Err(Error::QuadratureDiverged { .. })
        ));
    }

    #[test]
    fn activation_spec_json_defaults() {
        let a: ActivationSpec = serde_json::from_str(r#"{"kind":"elu","in_scale":3}"#).unwrap();
        assert_eq!(a, ActivationSpec::scaled(ActivationKind::Elu, 3.0, 1.0));
        assert!(serde_json::from_str::<ActivationSpec>(r#"{"kind":"relu","gain":2}"#).is_err());
    }
}
