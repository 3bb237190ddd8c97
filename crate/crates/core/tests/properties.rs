use approx::assert_relative_eq;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

use metaimpact::curvefit::linear_lsq;
use metaimpact::deconvolution::{fit_kernel_asymptote, modified_propagator, AsymptoteOptions, FitMode};
use metaimpact::flowstats::truncated_power_law;
use metaimpact::impact::{propagator_decay, zeta_from_autocorr};
use metaimpact::simulator::truncated_pareto_quantile;

proptest! {
    #[test]
    fn relaxation_stays_in_unit_interval(z in 0.0f64..1e4, beta in 0.01f64..1.0) {
        let v = propagator_decay(z, beta).unwrap();
        prop_assert!(v > 0.0 && v <= 1.0, "I({z}) = {v}");
    }

    #[test]
    fn relaxation_tail_matches_power_law(z in 1e3f64..1e6, beta in 0.05f64..0.95) {
        // (1+z)^(1-b) - z^(1-b) ~ (1-b) z^(-b) for large z
        let v = propagator_decay(z, beta).unwrap();
        let tail = (1.0 - beta) * z.powf(-beta);
        prop_assert!((v / tail - 1.0).abs() < 1e-3);
    }

    #[test]
    fn zeta_inverts_one_plus_lag_one(c1 in -0.99f64..5.0) {
        let z = zeta_from_autocorr(c1).unwrap();
        prop_assert!((z * (1.0 + c1) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn kernel_model_runs_from_one_to_asymptote(
        i_inf in 0.0f64..1.0,
        b in 0.0f64..0.5,
        beta in 0.05f64..0.95,
        tau in 0.0f64..200.0,
    ) {
        prop_assert_eq!(modified_propagator(0.0, i_inf, b, beta), 1.0);
        let g = modified_propagator(tau, i_inf, b, beta);
        prop_assert!(g >= i_inf - 1e-12 && g <= 1.0 + 1e-12);
        prop_assert!(modified_propagator(tau + 1.0, i_inf, b, beta) <= g + 1e-12);
    }

    #[test]
    fn power_law_kernel_is_positive_and_decreasing(
        tau in 1.0f64..500.0,
        a in 0.01f64..1.0,
        b in 0.0f64..0.1,
        gamma in 0.05f64..2.0,
    ) {
        let c = truncated_power_law(tau, a, b, gamma);
        prop_assert!(c > 0.0 && c <= a);
        prop_assert!(truncated_power_law(tau + 1.0, a, b, gamma) < c);
    }

    #[test]
    fn pareto_quantile_is_monotone_within_bounds(
        u in 0.0f64..1.0,
        du in 0.0f64..0.5,
        lo in 1e-5f64..1e-2,
        ratio in 1.5f64..1e3,
        tail in 0.2f64..3.0,
    ) {
        let hi = lo * ratio;
        let q = truncated_pareto_quantile(u, lo, hi, tail);
        prop_assert!(q >= lo * (1.0 - 1e-12) && q <= hi);
        prop_assert!(truncated_pareto_quantile((u + du).min(1.0), lo, hi, tail) >= q);
    }

    #[test]
    fn least_squares_recovers_exact_coefficients(
        coef in prop::collection::vec(-10.0f64..10.0, 1..5),
        xs in prop::collection::vec(-3.0f64..3.0, 40),
    ) {
        let p = coef.len();
        let rows = xs.len();
        // polynomial design on distinct nodes is full rank
        let design = DMatrix::from_fn(rows, p, |i, j| (i as f64 / rows as f64 + xs[0].abs()).powi(j as i32));
        let y = &design * DVector::from_column_slice(&coef);
        let fit = linear_lsq(&design, &y, None).unwrap();
        for (got, want) in fit.coefficients.iter().zip(&coef) {
            prop_assert!((got - want).abs() < 1e-6 * (1.0 + want.abs()), "{got} vs {want}");
        }
        prop_assert!(fit.rss < 1e-12);
    }
}

#[test]
fn relaxation_known_values() {
    assert_eq!(propagator_decay(0.0, 0.22).unwrap(), 1.0);
    assert_relative_eq!(propagator_decay(1.0, 0.22).unwrap(), 2f64.powf(0.78) - 1.0, epsilon = 1e-15);
    // beta = 1 is an instantaneous full reversion
    assert_relative_eq!(propagator_decay(3.0, 1.0).unwrap(), 0.0, epsilon = 1e-15);
    assert!(propagator_decay(-1.0, 0.2).is_err());
    assert!(propagator_decay(1.0, 0.0).is_err());
}

#[test]
fn zeta_rejects_full_anticorrelation() {
    assert!(zeta_from_autocorr(-1.0).is_err());
    assert!(zeta_from_autocorr(f64::NAN).is_err());
    assert_relative_eq!(zeta_from_autocorr(0.25).unwrap(), 0.8);
}

#[test]
fn asymptote_fit_recovers_noiseless_kernel() {
    let truth: Vec<f64> = (0..=60).map(|t| modified_propagator(t as f64, 0.42, 0.038, 0.22)).collect();
    let one = fit_kernel_asymptote(&truth, None, &AsymptoteOptions::default()).unwrap();
    assert_relative_eq!(one.i_inf, 0.42, epsilon = 1e-8);
    let two = fit_kernel_asymptote(&truth, None, &AsymptoteOptions { mode: FitMode::TwoParam, ..Default::default() }).unwrap();
    assert_relative_eq!(two.i_inf, 0.42, epsilon = 1e-6);
    assert_relative_eq!(two.b, 0.038, epsilon = 1e-6);
}
