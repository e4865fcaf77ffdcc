//! Finite-size Monte Carlo for random-feature ridge regression on the
//! √d-sphere.
//!
//! One replication draws a signal direction, random features `Θ`, training
//! data and a fresh test set from its own generator, fits
//! `â = (ZᵀZ + λI)⁻¹Zᵀy/√d` with `Z = σ(XΘᵀ/√d)/√d`, and reports the mean
//! squared gap to the noiseless target on the test set.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::activation::{compute_moments, ActivationSpec, QuadratureConfig};
use crate::error::{Error, Result};
use crate::nu_system::MIN_MU0_SQ;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalConfig {
    pub d: usize,
    pub n: usize,
    /// Feature count per activation block.
    #[serde(rename = "N")]
    pub n_features: Vec<usize>,
    pub activations: Vec<ActivationSpec>,
    pub lambda: f64,
    #[serde(rename = "F0")]
    pub f0: f64,
    #[serde(rename = "F1")]
    pub f1: f64,
    pub tau: f64,
    pub n_test: usize,
    pub replications: usize,
    pub base_seed: u64,
}

impl EmpiricalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d == 0 || self.n == 0 || self.n_test == 0 || self.replications == 0 {
            return Err(Error::InvalidSpec(
                "d, n, n_test and replications must be >= 1".into(),
            ));
        }
        if self.n_features.is_empty() || self.n_features.contains(&0) {
            return Err(Error::InvalidSpec(
                "every feature count N_c must be >= 1".into(),
            ));
        }
        if self.n_features.len() != self.activations.len() {
            return Err(Error::InvalidSpec(format!(
                "{} feature counts for {} activations",
                self.n_features.len(),
                self.activations.len()
            )));
        }
        if !(self.lambda > 0.0) || !self.lambda.is_finite() {
            return Err(Error::InvalidSpec("lambda must be > 0".into()));
        }
        if !(self.f1 >= 0.0) || !(self.tau >= 0.0) || !self.f0.is_finite() {
            return Err(Error::InvalidSpec(
                "F1 and tau must be >= 0, F0 finite".into(),
            ));
        }
        for a in &self.activations {
            a.validate()?;
        }
        if self.f0 != 0.0 {
            let q = QuadratureConfig::default();
            let mut s = 0.0;
            for a in &self.activations {
                let m = compute_moments(a, &q)?;
                s += m.mu0 * m.mu0;
            }
            if !(s > MIN_MU0_SQ) {
                return Err(Error::InvalidSpec(
                    "intercept not learnable: F0 != 0 requires sum of mu0^2 > 0 over activations"
                        .into(),
                ));
            }
        }
        Ok(())
    }

    pub fn total_features(&self) -> usize {
        self.n_features.iter().sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    /// `n × d`, rows on the √d-sphere.
    pub x: DMatrix<f64>,
    pub y: DVector<f64>,
    pub beta1: DVector<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalRisk {
    pub per_replication: Vec<f64>,
    pub mean: f64,
    pub std_error: f64,
}

impl EmpiricalRisk {
    pub fn from_samples(per_replication: Vec<f64>) -> Self {
        let r = per_replication.len() as f64;
        let mean = per_replication.iter().sum::<f64>() / r;
        let std_error = if per_replication.len() > 1 {
            let var = per_replication
                .iter()
                .map(|v| (v - mean) * (v - mean))
                .sum::<f64>()
                / (r - 1.0);
            (var / r).sqrt()
        } else {
            0.0
        };
        Self {
            per_replication,
            mean,
            std_error,
        }
    }
}

/// SplitMix64 finalizer.
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Per-replication seed; a pure function of `(base_seed, index)`.
pub fn replication_seed(base_seed: u64, index: u64) -> u64 {
    splitmix64(base_seed ^ splitmix64(index.wrapping_add(0x5851_F42D_4C95_7F2D)))
}

pub fn replication_rng(base_seed: u64, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(replication_seed(base_seed, index))
}

/// Uniform draw from the sphere of radius √d in `R^d`.
pub fn sample_sphere<R: Rng + ?Sized>(d: usize, rng: &mut R) -> Vec<f64> {
    loop {
        let g: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            let r = (d as f64).sqrt();
            return g.into_iter().map(|v| v / norm * r).collect();
        }
    }
}

/// `rows × d` matrix whose rows are independent sphere draws.
pub fn sample_sphere_rows<R: Rng + ?Sized>(rows: usize, d: usize, rng: &mut R) -> DMatrix<f64> {
    let mut m = DMatrix::<f64>::zeros(rows, d);
    for i in 0..rows {
        let row = sample_sphere(d, rng);
        for (j, v) in row.into_iter().enumerate() {
            m[(i, j)] = v;
        }
    }
    m
}

pub fn generate_dataset<R: Rng + ?Sized>(cfg: &EmpiricalConfig, rng: &mut R) -> Dataset {
    let d = cfg.d;
    let dir = sample_sphere(d, rng);
    let scale = cfg.f1 / (d as f64).sqrt();
    let beta1 = DVector::from_iterator(d, dir.into_iter().map(|v| v * scale));
    let x = sample_sphere_rows(cfg.n, d, rng);
    let signal = &x * &beta1;
    let y = DVector::from_iterator(
        cfg.n,
        signal.iter().map(|s| {
            let eps: f64 = rng.sample(StandardNormal);
            s + cfg.f0 + cfg.tau * eps
        }),
    );
    Dataset { x, y, beta1 }
}

fn check_blocks(theta: &DMatrix<f64>, acts: &[ActivationSpec], blocks: &[usize]) -> Result<()> {
    if acts.len() != blocks.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} activations for {} blocks",
            acts.len(),
            blocks.len()
        )));
    }
    let total: usize = blocks.iter().sum();
    if total != theta.nrows() {
        return Err(Error::ShapeMismatch(format!(
            "blocks cover {total} features but Theta has {} rows",
            theta.nrows()
        )));
    }
    Ok(())
}

/// `Z_{j,i} = σ_{c(i)}(⟨θ_i, x_j⟩/√d)/√d`, columns grouped by block.
pub fn feature_matrix(
    x: &DMatrix<f64>,
    theta: &DMatrix<f64>,
    acts: &[ActivationSpec],
    blocks: &[usize],
) -> Result<DMatrix<f64>> {
    if x.ncols() != theta.ncols() {
        return Err(Error::ShapeMismatch(format!(
            "X has {} columns, Theta has {}",
            x.ncols(),
            theta.ncols()
        )));
    }
    check_blocks(theta, acts, blocks)?;
    let inv_sqrt_d = 1.0 / (x.ncols() as f64).sqrt();
    let mut z = x * theta.transpose();
    let mut start = 0;
    for (act, &len) in acts.iter().zip(blocks) {
        for col in start..start + len {
            for v in z.column_mut(col).iter_mut() {
                *v = act.eval(*v * inv_sqrt_d) * inv_sqrt_d;
            }
        }
        start += len;
    }
    Ok(z)
}

fn spd_solve(a: DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    let chol: Cholesky<f64, Dyn> = Cholesky::new(a).ok_or_else(|| {
        Error::SolveFailure("Cholesky factorization failed (non-finite input?)".into())
    })?;
    Ok(chol.solve(b))
}

fn check_ridge(z: &DMatrix<f64>, y: &DVector<f64>, lambda: f64) -> Result<()> {
    if z.nrows() != y.len() {
        return Err(Error::ShapeMismatch(format!(
            "Z has {} rows, y has {} entries",
            z.nrows(),
            y.len()
        )));
    }
    if !(lambda > 0.0) {
        return Err(Error::InvalidSpec("lambda must be > 0".into()));
    }
    Ok(())
}

/// `(ZᵀZ + λI_N)⁻¹Zᵀy/√d`.
pub fn ridge_fit_primal(
    z: &DMatrix<f64>,
    y: &DVector<f64>,
    lambda: f64,
    d: usize,
) -> Result<DVector<f64>> {
    check_ridge(z, y, lambda)?;
    let mut gram = z.tr_mul(z);
    for i in 0..gram.nrows() {
        gram[(i, i)] += lambda;
    }
    let rhs = z.tr_mul(y);
    Ok(spd_solve(gram, &rhs)? / (d as f64).sqrt())
}

/// `Zᵀ(ZZᵀ + λI_n)⁻¹y/√d`.
pub fn ridge_fit_dual(
    z: &DMatrix<f64>,
    y: &DVector<f64>,
    lambda: f64,
    d: usize,
) -> Result<DVector<f64>> {
    check_ridge(z, y, lambda)?;
    let mut gram = z * z.transpose();
    for i in 0..gram.nrows() {
        gram[(i, i)] += lambda;
    }
    let alpha = spd_solve(gram, y)?;
    Ok(z.tr_mul(&alpha) / (d as f64).sqrt())
}

/// Ridge coefficients, factorizing whichever Gram matrix is smaller.
pub fn ridge_fit(
    z: &DMatrix<f64>,
    y: &DVector<f64>,
    lambda: f64,
    d: usize,
) -> Result<DVector<f64>> {
    if z.ncols() > z.nrows() {
        ridge_fit_dual(z, y, lambda, d)
    } else {
        ridge_fit_primal(z, y, lambda, d)
    }
}

/// Gradient of `(1/n)‖y − √d·Zâ‖² + (d/n)·λ‖â‖²` at `a`.
pub fn ridge_gradient(
    z: &DMatrix<f64>,
    y: &DVector<f64>,
    a: &DVector<f64>,
    lambda: f64,
    d: usize,
) -> DVector<f64> {
    let n = z.nrows() as f64;
    let sd = (d as f64).sqrt();
    let resid = y - (z * a) * sd;
    (z.tr_mul(&resid) * (-2.0 * sd / n)) + a * (2.0 * d as f64 * lambda / n)
}

/// Mean of `(F0 + xᵀβ₁ − f(x))²` over the rows of `x_test`.
pub fn excess_risk_on(
    ahat: &DVector<f64>,
    theta: &DMatrix<f64>,
    acts: &[ActivationSpec],
    blocks: &[usize],
    beta1: &DVector<f64>,
    f0: f64,
    x_test: &DMatrix<f64>,
) -> Result<f64> {
    if ahat.len() != theta.nrows() {
        return Err(Error::ShapeMismatch(
            "coefficient count differs from feature count".into(),
        ));
    }
    let z = feature_matrix(x_test, theta, acts, blocks)?;
    let sd = (x_test.ncols() as f64).sqrt();
    let pred = (z * ahat) * sd;
    let target = x_test * beta1;
    let total: f64 = target
        .iter()
        .zip(pred.iter())
        .map(|(t, p)| {
            let e = f0 + t - p;
            e * e
        })
        .sum();
    Ok(total / x_test.nrows() as f64)
}

/// Monte Carlo estimate of the excess risk on `n_test` fresh sphere draws.
#[allow(clippy::too_many_arguments)]
pub fn excess_risk_estimate<R: Rng + ?Sized>(
    ahat: &DVector<f64>,
    theta: &DMatrix<f64>,
    acts: &[ActivationSpec],
    blocks: &[usize],
    beta1: &DVector<f64>,
    f0: f64,
    n_test: usize,
    rng: &mut R,
) -> Result<f64> {
    let x_test = sample_sphere_rows(n_test, theta.ncols(), rng);
    excess_risk_on(ahat, theta, acts, blocks, beta1, f0, &x_test)
}

/// One full replication with its own generator.
pub fn run_replication(cfg: &EmpiricalConfig, index: usize) -> Result<f64> {
    let mut rng = replication_rng(cfg.base_seed, index as u64);
    let ds = generate_dataset(cfg, &mut rng);
    let theta = sample_sphere_rows(cfg.total_features(), cfg.d, &mut rng);
    let z = feature_matrix(&ds.x, &theta, &cfg.activations, &cfg.n_features)?;
    let ahat = ridge_fit(&z, &ds.y, cfg.lambda, cfg.d)?;
    excess_risk_estimate(
        &ahat,
        &theta,
        &cfg.activations,
        &cfg.n_features,
        &ds.beta1,
        cfg.f0,
        cfg.n_test,
        &mut rng,
    )
}

/// All replications, in parallel on the current rayon pool. The result does
/// not depend on the pool size.
pub fn run_experiment(cfg: &EmpiricalConfig) -> Result<EmpiricalRisk> {
    cfg.validate()?;
    let per: Vec<f64> = (0..cfg.replications)
        .into_par_iter()
        .map(|r| {
            run_replication(cfg, r).map_err(|e| Error::Replication {
                index: r,
                source: Box::new(e),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(EmpiricalRisk::from_samples(per))
}
