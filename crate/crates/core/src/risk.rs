//! Asymptotic excess risk from the ν-system solution.
//!
//! With `ν_j = i·b_j` every entry of the auxiliary matrices `H` and `V`
//! is real: `ν_j² = −b_j²`, `M_N = i·m_N` with `m_N = Σ μ_{c,1}² b_c`, and
//! `M_D = ν_{K+1}·M_N − 1 = −(b_{K+1}·m_N + 1)`. The risk is read off
//! `L = Vᵀ H⁻¹ V`:
//!
//! ```text
//! R = F₁²·(1/M_D² + L₃₄ + L₁₄) + τ²·(L₂₃ + L₁₂)
//! ```
//!
//! [`explicit_risk_k2`] evaluates the same four `L` entries from closed-form
//! K = 2 expressions and serves as an independent check of the matrix path.

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::activation::Moments;
use crate::error::{Error, Result};
use crate::linalg::{solve_symmetric, symmetric_condition};
use crate::nu_system::{solve_nu, NuStar, SolverConfig, TheorySpec};

/// Condition estimate of `H` above which results carry a warning.
pub const ILL_CONDITIONED: f64 = 1e12;

#[derive(Debug, Clone, PartialEq)]
pub struct TheoryMatrices {
    pub m_n: f64,
    pub m_d: f64,
    pub h: DMatrix<f64>,
    pub v: DMatrix<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TheoryRisk {
    pub risk: f64,
    pub bias: f64,
    pub variance: f64,
    /// `L = VᵀH⁻¹V`, row-major. The closed-form K = 2 path only fills the
    /// four entries the risk needs (and their mirrors); the rest are NaN.
    pub l: [[f64; 4]; 4],
    pub m_d: f64,
    /// 2-norm condition number of `H` (NaN on the closed-form path).
    pub h_condition: f64,
    pub nu: NuStar,
}

impl TheoryRisk {
    pub fn ill_conditioned(&self) -> bool {
        self.h_condition > ILL_CONDITIONED
    }
}

fn check_nu(spec: &TheorySpec, nu: &NuStar) -> Result<()> {
    if nu.b.len() != spec.k() + 1 {
        return Err(Error::ShapeMismatch(format!(
            "nu has {} entries for K = {}",
            nu.b.len(),
            spec.k()
        )));
    }
    if let Some(j) = nu.b.iter().position(|&b| b == 0.0) {
        return Err(Error::DegenerateB(j));
    }
    Ok(())
}

pub fn build_matrices(spec: &TheorySpec, nu: &NuStar) -> Result<TheoryMatrices> {
    check_nu(spec, nu)?;
    let k = spec.k();
    let b = &nu.b;
    let bn = b[k];
    let mu1: Vec<f64> = spec.moments.iter().map(Moments::mu1_sq).collect();
    let mu2: Vec<f64> = spec.moments.iter().map(|m| m.mu2_sq).collect();
    let m_n: f64 = mu1.iter().zip(b).map(|(m, b)| m * b).sum();
    let m_d = -(bn * m_n + 1.0);
    let md2 = m_d * m_d;

    let mut h = DMatrix::<f64>::zeros(k + 1, k + 1);
    for i in 0..k {
        for j in i..k {
            let mut v = bn * bn * mu1[i] * mu1[j] / md2;
            if i == j {
                v -= spec.psi[i] / (b[i] * b[i]);
            }
            h[(i, j)] = v;
            h[(j, i)] = v;
        }
        let v = -mu1[i] / md2 - mu2[i];
        h[(i, k)] = v;
        h[(k, i)] = v;
    }
    h[(k, k)] = m_n * m_n / md2 - spec.psi_n / (bn * bn);

    let mut v = DMatrix::<f64>::zeros(k + 1, 4);
    for c in 0..k {
        v[(c, 0)] = mu2[c];
        v[(c, 2)] = mu1[c] / md2;
        v[(c, 3)] = -bn * bn * mu1[c] / md2;
    }
    v[(k, 1)] = 1.0;
    v[(k, 2)] = -m_n * m_n / md2;
    v[(k, 3)] = 1.0 / md2;
    Ok(TheoryMatrices { m_n, m_d, h, v })
}

fn assemble(
    spec: &TheorySpec,
    m_d: f64,
    l: [[f64; 4]; 4],
    h_condition: f64,
    nu: NuStar,
) -> TheoryRisk {
    let f1sq = spec.f1 * spec.f1;
    let tausq = spec.tau * spec.tau;
    let bias = f1sq * (1.0 / (m_d * m_d) + l[2][3] + l[0][3]);
    let variance = tausq * (l[1][2] + l[0][1]);
    TheoryRisk {
        risk: bias + variance,
        bias,
        variance,
        l,
        m_d,
        h_condition,
        nu,
    }
}

/// Risk for an already solved ν-system.
pub fn risk_from_nu(spec: &TheorySpec, nu: NuStar) -> Result<TheoryRisk> {
    let mats = build_matrices(spec, &nu)?;
    let h_inv_v = solve_symmetric(&mats.h, &mats.v)?;
    let lm = mats.v.transpose() * h_inv_v;
    let mut l = [[0.0; 4]; 4];
    for (i, row) in l.iter_mut().enumerate() {
        for (j, e) in row.iter_mut().enumerate() {
            *e = lm[(i, j)];
        }
    }
    let cond = symmetric_condition(&mats.h);
    Ok(assemble(spec, mats.m_d, l, cond, nu))
}

pub fn asymptotic_risk(spec: &TheorySpec, cfg: &SolverConfig) -> Result<TheoryRisk> {
    let nu = solve_nu(spec, cfg)?;
    risk_from_nu(spec, nu)
}

/// `L` recomputed in complex arithmetic straight from the complex-valued
/// definitions of `H` and `V` with `ν_j = i·b_j`.
pub fn complex_l_matrix(spec: &TheorySpec, nu: &NuStar) -> Result<DMatrix<Complex64>> {
    check_nu(spec, nu)?;
    let k = spec.k();
    let i = Complex64::i();
    let v: Vec<Complex64> = nu.b.iter().map(|&b| i * b).collect();
    let vn = v[k];
    let mu1: Vec<f64> = spec.moments.iter().map(Moments::mu1_sq).collect();
    let mu2: Vec<f64> = spec.moments.iter().map(|m| m.mu2_sq).collect();
    let m_n: Complex64 = mu1.iter().zip(&v).map(|(m, x)| *m * x).sum();
    let m_d = vn * m_n - 1.0;
    let md2 = m_d * m_d;
    let one = Complex64::new(1.0, 0.0);

    let mut h = DMatrix::<Complex64>::zeros(k + 1, k + 1);
    for a in 0..k {
        for c in 0..k {
            let mut e = -(vn * vn) * mu1[a] * mu1[c] / md2;
            if a == c {
                e += spec.psi[a] / (v[a] * v[a]);
            }
            h[(a, c)] = e;
        }
        let e = -(one * mu1[a]) / md2 - mu2[a];
        h[(a, k)] = e;
        h[(k, a)] = e;
    }
    h[(k, k)] = -(m_n * m_n) / md2 + spec.psi_n / (vn * vn);

    let mut vm = DMatrix::<Complex64>::zeros(k + 1, 4);
    for c in 0..k {
        vm[(c, 0)] = one * mu2[c];
        vm[(c, 2)] = one * mu1[c] / md2;
        vm[(c, 3)] = vn * vn * mu1[c] / md2;
    }
    vm[(k, 1)] = one;
    vm[(k, 2)] = m_n * m_n / md2;
    vm[(k, 3)] = one / md2;

    let x = h.lu().solve(&vm).ok_or(Error::SingularMatrix)?;
    Ok(vm.transpose() * x)
}

/// Closed-form K = 2 evaluation of `S` and the four needed `L` entries,
/// followed by the same risk formula.
pub fn explicit_risk_k2(spec: &TheorySpec, nu: &NuStar) -> Result<TheoryRisk> {
    if spec.k() != 2 {
        return Err(Error::WrongK(spec.k()));
    }
    check_nu(spec, nu)?;
    let b = &nu.b;
    // squared ν's are negative
    let (n1, n2, n3) = (-b[0] * b[0], -b[1] * b[1], -b[2] * b[2]);
    let (a1, a2) = (spec.moments[0].mu1_sq(), spec.moments[1].mu1_sq());
    let (c1, c2) = (spec.moments[0].mu2_sq, spec.moments[1].mu2_sq);
    let (p1, p2, p3) = (spec.psi[0], spec.psi[1], spec.psi_n);
    let m_n = a1 * b[0] + a2 * b[1];
    let mn2 = -m_n * m_n;
    let m_d = -(b[2] * m_n + 1.0);
    let d2 = m_d * m_d;
    let d4 = d2 * d2;
    let cross = (c1 * a2 - a1 * c2).powi(2);

    let s = n3 * n3 * (n2 * mn2 * a2 * a2 * p1 + n1 * mn2 * a1 * a1 * p2 + n1 * n2 * d2 * cross)
        - n3 * n2 * p1 * (2.0 * d2 * a2 * c2 + d4 * c2 * c2 + a2 * a2 * (1.0 + d2 * p3))
        - n3 * n1 * p2 * (2.0 * d2 * a1 * c1 + d4 * c1 * c1 + a1 * a1 * (1.0 + d2 * p3))
        - n3 * p1 * p2 * d2 * mn2
        + d4 * p1 * p2 * p3;
    if !(s.abs() >= 1e-300) {
        return Err(Error::DegenerateS(s.abs()));
    }

    let l14 = n3 / s
        * (-n3 * mn2 * (n2 * a2 * c2 * p1 + n1 * a1 * c1 * p2)
            + n1 * c1 * p2 * (d2 * c1 + a1 * (1.0 + d2 * p3))
            + n2 * c2 * p1 * (d2 * c2 + a2 * (1.0 + d2 * p3)));
    let l23 = n3 / s
        * (n2 * a2 * (a2 + d2 * c2) * p1 + n1 * a1 * (a1 + d2 * c1) * p2
            - n3 * mn2 * (n2 * a2 * a2 * p1 + n1 * a1 * a1 * p2)
            + d2 * mn2 * p1 * p2);
    let l12 = n3 / s
        * d2
        * (n2 * c2 * (a2 + d2 * c2) * p1 + n1 * c1 * (a1 + d2 * c1) * p2 - n1 * n2 * n3 * cross);
    let l34 = n3 / (d2 * s)
        * (n3 * (n2 * mn2 * a2 * (d2 * c2 - a2) * p1 + n1 * mn2 * a1 * (d2 * c1 - a1) * p2)
            + p1 * p2 * d2 * mn2
            - n1 * n2 * n3 * d2 * cross
            + n2 * a2 * p1 * (d2 * c2 + a2 + d2 * a2 * p3)
            + n1 * a1 * p2 * (d2 * c1 + a1 + d2 * a1 * p3));

    let mut l = [[f64::NAN; 4]; 4];
    for (i, j, v) in [(0, 3, l14), (1, 2, l23), (0, 1, l12), (2, 3, l34)] {
        l[i][j] = v;
        l[j][i] = v;
    }
    Ok(assemble(spec, m_d, l, f64::NAN, nu.clone()))
}

/// Two-activation instance for the infinite-width limit
/// `ψ₁, ψ₂ → ∞` with `ψ₁/r₁ = ψ₂/r₂`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LimitSpec {
    pub r1: f64,
    pub r2: f64,
    pub psi3: f64,
    pub moments: [Moments; 2],
    #[serde(rename = "F1")]
    pub f1: f64,
    pub tau: f64,
}

pub fn limit_risk_infinite_width(ls: &LimitSpec) -> Result<f64> {
    if !(ls.r1 > 0.0 && ls.r2 > 0.0 && ls.psi3 > 0.0) {
        return Err(Error::InvalidSpec("r1, r2 and psi3 must be > 0".into()));
    }
    let r = [ls.r1, ls.r2];
    let mu1: Vec<f64> = ls.moments.iter().map(Moments::mu1_sq).collect();
    let mu2: Vec<f64> = ls.moments.iter().map(|m| m.mu2_sq).collect();
    let mut cross = 0.0;
    for i in 0..2 {
        for j in 0..2 {
            cross += r[i] * r[j] * mu1[i] * mu2[j];
        }
    }
    if !(cross > 0.0) {
        return Err(Error::DegenerateMoments(
            "sum_ij r_i r_j mu_{i,1}^2 mu_{j,2}^2 must be > 0".into(),
        ));
    }
    let lin: f64 = (0..2).map(|i| r[i] * mu1[i]).sum();
    let nonlin: f64 = (0..2).map(|i| r[i] * mu2[i]).sum();
    let t = (ls.psi3 - 1.0) * lin - nonlin;
    let chi1 = t + (t * t + 4.0 * ls.psi3 * cross).sqrt();
    let chi0 = lin * chi1 / (2.0 * cross);
    let num = ls.f1 * ls.f1 * ls.psi3 + ls.tau * ls.tau * chi0 * chi0;
    let den = (chi0 + 1.0).powi(2) * ls.psi3 - chi0 * chi0;
    Ok(num / den)
}

/// Vanishing-width limit: the predictor degenerates to zero.
pub fn limit_risk_zero_width(spec: &TheorySpec) -> f64 {
    spec.f1 * spec.f1
}
