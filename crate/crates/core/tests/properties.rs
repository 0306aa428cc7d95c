use std::sync::Arc;

use proptest::prelude::*;
use qla_core::estimators::{minimize_objective, PosteriorTable, PriorDensity, QuadratureGrid};
use qla_core::experiments::derive_seed;
use qla_core::experiments::stats::{ks_two_sample, Polynomial};
use qla_core::loss::LossFunction;
use qla_core::models::{builtin_model, ParameterBox};
use qla_core::qla::{contrast, Stage, StageContrast};
use qla_core::simulator::{simulate_observations, PathConfig};

fn vec_strategy() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-50.0f64..50.0, 1..=2)
}

fn table(values: &[f64], prior: &PriorDensity, bx: &ParameterBox) -> PosteriorTable {
    let grid = QuadratureGrid::midpoint(bx, &[values.len()]).unwrap();
    PosteriorTable::from_values(grid, values.to_vec(), prior, bx.clone()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn builtin_losses_are_symmetric(u in vec_strategy(), p in 0.5f64..4.0, r in 0.1f64..10.0) {
        let neg: Vec<f64> = u.iter().map(|v| -v).collect();
        let d = u.len();
        for w in [
            LossFunction::power(p, d).unwrap(),
            LossFunction::indicator(vec![r; d]).unwrap(),
            LossFunction::indicator_ellipsoid(vec![r; d]).unwrap(),
        ] {
            prop_assert_eq!(w.eval(&u).to_bits(), w.eval(&neg).to_bits());
        }
    }

    #[test]
    fn power_loss_is_homogeneous(u in vec_strategy(), lambda in 0.01f64..100.0, p in prop::sample::select(vec![1.0, 2.0])) {
        let w = LossFunction::power(p, u.len()).unwrap();
        let lu: Vec<f64> = u.iter().map(|v| lambda * v).collect();
        let lhs = w.eval(&lu);
        let rhs = lambda.powf(p) * w.eval(&u);
        prop_assert!((lhs - rhs).abs() <= 1e-13 * rhs.abs().max(1e-300));
    }

    #[test]
    fn bayes_estimate_ignores_prior_and_loss_scale(
        values in prop::collection::vec(-30.0f64..0.0, 5..60),
        c in 0.01f64..100.0,
        p in prop::sample::select(vec![1.0, 2.0]),
    ) {
        let bx = ParameterBox::interval(0.2, 5.0).unwrap();
        let prior = PriorDensity::uniform(bx.clone());
        let w = LossFunction::power(p, 1).unwrap();
        let base = minimize_objective(&table(&values, &prior, &bx), &w, 3.0).unwrap();
        // equal up to the golden-section tolerance 1e-6 / rate
        let tol = 2e-6 / 3.0;
        let scaled_prior = minimize_objective(&table(&values, &prior.scaled(c), &bx), &w, 3.0).unwrap();
        prop_assert!((base.z[0] - scaled_prior.z[0]).abs() <= tol, "{} vs {}", base.z[0], scaled_prior.z[0]);
        let inner = w.clone();
        let cw = LossFunction::custom("scaled", 1, p, Arc::new(move |u| c * inner.eval(u)));
        let scaled_loss = minimize_objective(&table(&values, &prior, &bx), &cw, 3.0).unwrap();
        prop_assert!((base.z[0] - scaled_loss.z[0]).abs() <= tol, "{} vs {}", base.z[0], scaled_loss.z[0]);
        prop_assert!(bx.contains_closed(&base.z));
    }

    #[test]
    fn constant_shift_of_contrast_leaves_estimate(values in prop::collection::vec(-30.0f64..0.0, 5..60), shift in -1e6f64..1e6) {
        let bx = ParameterBox::interval(-1.0, 1.0).unwrap();
        let prior = PriorDensity::uniform(bx.clone());
        let w = LossFunction::power(2.0, 1).unwrap();
        let a = minimize_objective(&table(&values, &prior, &bx), &w, 2.0).unwrap();
        let shifted: Vec<f64> = values.iter().map(|v| v + shift).collect();
        let b = minimize_objective(&table(&shifted, &prior, &bx), &w, 2.0).unwrap();
        // golden-section tolerance 1e-6 / rate
        prop_assert!((a.z[0] - b.z[0]).abs() <= 1e-6, "{} vs {}", a.z[0], b.z[0]);
    }

    #[test]
    fn projection_lands_in_box(x in prop::collection::vec(-100.0f64..100.0, 2)) {
        let bx = ParameterBox::new(vec![0.2, -1.0], vec![5.0, 1.0]).unwrap();
        let mut y = x.clone();
        bx.project(&mut y);
        prop_assert!(bx.contains_closed(&y));
        if bx.contains_closed(&x) {
            prop_assert_eq!(x, y);
        }
    }

    #[test]
    fn mixed_fourth_moment(s11 in 0.1f64..4.0, s22 in 0.1f64..4.0, rho in -0.9f64..0.9) {
        let s12 = rho * (s11 * s22).sqrt();
        let cov = [s11, s12, s12, s22];
        let m = Polynomial::parse("u1^2*u2^2").unwrap().gaussian_expectation(&cov, 2);
        let expected = s11 * s22 + 2.0 * s12 * s12;
        prop_assert!((m - expected).abs() < 1e-12 * expected);
        let k = Polynomial::parse("u1^4").unwrap().gaussian_expectation(&cov, 2);
        prop_assert!((k - 3.0 * s11 * s11).abs() < 1e-12 * k);
    }

    #[test]
    fn two_sample_ks_is_symmetric(a in prop::collection::vec(-5.0f64..5.0, 1..40), b in prop::collection::vec(-5.0f64..5.0, 1..40)) {
        let d = ks_two_sample(&a, &b);
        prop_assert_eq!(d, ks_two_sample(&b, &a));
        prop_assert!((0.0..=1.0).contains(&d));
        prop_assert_eq!(ks_two_sample(&a, &a), 0.0);
    }

    #[test]
    fn seeds_differ_across_replicates(base in any::<u64>(), n in 1usize..100_000, r in 0usize..10_000) {
        prop_assert_ne!(derive_seed(base, n, r), derive_seed(base, n, r + 1));
        prop_assert_ne!(derive_seed(base, n, r), derive_seed(base, n + 1, r));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn stage_cache_is_bitwise_exact(t1 in 0.2f64..5.0, t2 in 0.2f64..5.0, seed in 0u64..1000) {
        let (model, truth) = builtin_model("BOU").unwrap();
        let obs = simulate_observations(&model, &truth, &PathConfig::rate_regime(300, 0.6, 4, seed).unwrap()).unwrap();
        let full = contrast(&model, &obs, &[t1], &[t2]).unwrap();
        let s1 = StageContrast::new(&model, &obs, Stage::Diffusion, &[t2]).unwrap().eval(&[t1]).unwrap();
        let s2 = StageContrast::new(&model, &obs, Stage::Drift, &[t1]).unwrap().eval(&[t2]).unwrap();
        prop_assert_eq!(full.to_bits(), s1.to_bits());
        prop_assert_eq!(full.to_bits(), s2.to_bits());
    }
}
