use std::f64::consts::PI;

use approx::assert_abs_diff_eq;
use multidescent::activation::{
    compute_moments, estimate_moments, scaled_moments, ActivationKind, ActivationSpec, Moments,
    QuadratureConfig,
};
use proptest::prelude::*;

fn q() -> QuadratureConfig {
    QuadratureConfig::default()
}

fn close(a: Moments, b: Moments, tol: f64) {
    assert_abs_diff_eq!(a.mu0, b.mu0, epsilon = tol);
    assert_abs_diff_eq!(a.mu1, b.mu1, epsilon = tol);
    assert_abs_diff_eq!(a.mu2_sq, b.mu2_sq, epsilon = tol);
}

fn kind_strategy() -> impl Strategy<Value = ActivationKind> {
    prop::sample::select(ActivationKind::ALL.to_vec())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn output_scale_law(kind in kind_strategy(), s in 0.2f64..3.0, a in -4.0f64..4.0) {
        let unit = compute_moments(&ActivationSpec::scaled(kind, s, 1.0), &q()).unwrap();
        let scaled = compute_moments(&ActivationSpec::scaled(kind, s, a), &q()).unwrap();
        let want = scaled_moments(unit, a);
        prop_assert!((scaled.mu0 - want.mu0).abs() <= 1e-10);
        prop_assert!((scaled.mu1 - want.mu1).abs() <= 1e-10);
        prop_assert!((scaled.mu2_sq - want.mu2_sq).abs() <= 1e-10);
    }

    #[test]
    fn unclamped_residual_variance_is_nonnegative(kind in kind_strategy(), s in 0.05f64..5.0) {
        let e = estimate_moments(&ActivationSpec::scaled(kind, s, 1.0), &q()).unwrap();
        prop_assert!(e.mu2_sq_unclamped >= -1e-10);
        prop_assert!(e.moments.mu2_sq >= 0.0);
    }
}

#[test]
fn refined_rule_agrees() {
    let fine = QuadratureConfig {
        truncation: 14.0,
        nodes_per_panel: 128,
        ..q()
    };
    for kind in ActivationKind::ALL {
        for s in [0.1, 1.0, 3.0, 9.0] {
            let act = ActivationSpec::scaled(kind, s, 1.0).with_shift(0.3);
            let a = compute_moments(&act, &q()).unwrap();
            let b = compute_moments(&act, &fine).unwrap();
            close(a, b, 1e-10);
        }
    }
}

#[test]
fn closed_forms() {
    let r = 1.0 / (2.0 * PI).sqrt();
    for s in [0.25, 1.0, 9.0] {
        let relu =
            compute_moments(&ActivationSpec::scaled(ActivationKind::Relu, s, 1.0), &q()).unwrap();
        close(
            relu,
            Moments::new(s * r, s / 2.0, s * s * (0.25 - 1.0 / (2.0 * PI))),
            1e-10,
        );
    }
    let step = compute_moments(&ActivationSpec::new(ActivationKind::Step), &q()).unwrap();
    close(step, Moments::new(0.5, r, 0.25 - 1.0 / (2.0 * PI)), 1e-10);
    let id = compute_moments(
        &ActivationSpec::scaled(ActivationKind::Identity, 2.0, 1.0),
        &q(),
    )
    .unwrap();
    close(id, Moments::new(0.0, 2.0, 0.0), 1e-10);
    let c = compute_moments(
        &ActivationSpec::scaled(ActivationKind::Constant, 1.0, 3.0),
        &q(),
    )
    .unwrap();
    close(c, Moments::new(3.0, 0.0, 0.0), 1e-10);

    // E sin(aG) = 0, E G sin(aG) = a e^{-a²/2}, E sin² = (1 − e^{-2a²})/2;
    // E cos(aG) = e^{-a²/2}, E G cos(aG) = 0, E cos² = (1 + e^{-2a²})/2.
    for a in [0.3, 1.0, 2.5] {
        let e1 = (-a * a / 2.0f64).exp();
        let e2 = (-2.0 * a * a).exp();
        let sin =
            compute_moments(&ActivationSpec::scaled(ActivationKind::Sin, a, 1.0), &q()).unwrap();
        close(
            sin,
            Moments::new(0.0, a * e1, (1.0 - e2) / 2.0 - a * a * e1 * e1),
            1e-10,
        );
        let cos =
            compute_moments(&ActivationSpec::scaled(ActivationKind::Cos, a, 1.0), &q()).unwrap();
        close(
            cos,
            Moments::new(e1, 0.0, (1.0 + e2) / 2.0 - e1 * e1),
            1e-10,
        );
    }
}

#[test]
fn shift_moves_only_the_mean() {
    let base = compute_moments(&ActivationSpec::new(ActivationKind::Tanh), &q()).unwrap();
    let shifted = compute_moments(
        &ActivationSpec::new(ActivationKind::Tanh).with_shift(0.7),
        &q(),
    )
    .unwrap();
    close(
        shifted,
        Moments::new(base.mu0 + 0.7, base.mu1, base.mu2_sq),
        1e-12,
    );
}
