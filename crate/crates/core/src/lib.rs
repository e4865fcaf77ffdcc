//! Exact high-dimensional excess risk of multiple random feature models,
//! plus a Monte Carlo simulator that checks it.
//!
//! The pipeline is: activation → spherical [`Moments`] → ν-system
//! ([`solve_nu`]) → auxiliary matrices → [`asymptotic_risk`]. The
//! [`simulator`] module fits finite random-feature ridge regressions on
//! spherical data, and [`sweep`] runs both over a model-complexity grid.

// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod activation;
pub mod config;
pub mod error;
pub mod format;
pub mod linalg;
pub mod nu_system;
pub mod risk;
pub mod simulator;
pub mod sweep;

pub use activation::{
    compute_moments, eval_activation, scaled_moments, ActivationKind, ActivationSpec, Moments,
    QuadratureConfig,
};
pub use error::{Error, Result};
pub use nu_system::{residual_vector, solve_nu, verify_complex, NuStar, SolverConfig, TheorySpec};
pub use risk::{
    asymptotic_risk, build_matrices, explicit_risk_k2, limit_risk_infinite_width,
    limit_risk_zero_width, LimitSpec, TheoryMatrices, TheoryRisk,
};
pub use simulator::{run_experiment, EmpiricalConfig, EmpiricalRisk};
pub use sweep::{expand_grid, run_sweep, SweepResult, SweepSpec};
