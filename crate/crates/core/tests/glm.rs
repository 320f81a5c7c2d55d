mod common;

use common::*;
use logitsel::glm::{fit_firth, fit_mle, loglik, predict_probs, with_intercept, GlmError};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

#[test]
fn mle_matches_independent_newton() {
    let mut r = rng(7);
    let x = normal_matrix(&mut r, 50, 3);
    let y = bernoulli_outcome(&mut r, &x, 0.2, &[0.7, -0.4, 0.1]);
    let fit = fit_mle(&x, &y, true).unwrap();
    let oracle = reference_mle(&with_intercept(&x), &y).unwrap();
    for (a, b) in fit.beta.iter().zip(&oracle) {
        assert!((a - b).abs() < 1e-6);
    }
    // intercept score equation
    let probs = predict_probs(&DVector::from_vec(fit.beta.clone()), &x);
    let score: f64 = y.iter().zip(&probs).map(|(a, b)| a - b).sum();
    assert!(score.abs() <= 1e-6);
}

#[test]
fn separated_data_have_no_mle() {
    let x = DMatrix::from_column_slice(4, 1, &[1.0, 2.0, 3.0, 4.0]);
    let y = DVector::from_column_slice(&[0.0, 0.0, 1.0, 1.0]);
    match fit_mle(&x, &y, true) {
        Err(GlmError::SeparationSuspected) => {}
        Ok(f) => assert!(!f.converged),
        Err(e) => panic!("unexpected error {e}"),
    }
}

#[test]
fn firth_two_point_separation_matches_grid() {
    let x = [-1.0, 1.0];
    let y = [0.0, 1.0];
    let fit = fit_firth(&DMatrix::from_column_slice(2, 1, &x), &DVector::from_column_slice(&y), false).unwrap();
    assert!(fit.beta[0].is_finite());
    let oracle = grid_argmax(|b| firth_objective_1d(&x, &y, b), -20.0, 20.0);
    assert!((fit.beta[0] - oracle).abs() < 1e-6, "{} vs {oracle}", fit.beta[0]);
}

#[test]
fn firth_approaches_mle_for_large_n() {
    let mut r = rng(11);
    let x = normal_matrix(&mut r, 5000, 2);
    let y = bernoulli_outcome(&mut r, &x, -0.5, &[0.8, -0.3]);
    let a = fit_firth(&x, &y, true).unwrap();
    let b = fit_mle(&x, &y, true).unwrap();
    for (u, v) in a.beta.iter().zip(&b.beta) {
        assert!((u - v).abs() < 0.05);
    }
}

#[test]
fn firth_is_equivariant_under_label_flip() {
    let mut r = rng(13);
    let x = normal_matrix(&mut r, 25, 2);
    let y = bernoulli_outcome(&mut r, &x, 0.3, &[1.5, -1.0]);
    let flipped = y.map(|v| 1.0 - v);
    let a = fit_firth(&x, &y, true).unwrap();
    let b = fit_firth(&x, &flipped, true).unwrap();
    for (u, v) in a.beta.iter().zip(&b.beta) {
        assert!((u + v).abs() < 1e-6);
    }
}

#[test]
fn logistic_at_ten() {
    let p = predict_probs(&DVector::from_column_slice(&[10.0]), &DMatrix::from_element(1, 1, 1.0));
    assert!((p[0] - 0.9999546).abs() < 1e-7);
}

proptest! {
    #[test]
    fn loglik_is_concave_along_segments(seed in any::<u64>(), t in 0.01f64..0.99) {
        let mut r = rng(seed);
        let x = with_intercept(&normal_matrix(&mut r, 20, 3));
        let y = bernoulli_outcome(&mut r, &x.columns(1, 3).into_owned(), 0.0, &[1.0, 0.0, -1.0]);
        let b1 = DVector::from_fn(4, |_, _| 3.0 * normal_matrix(&mut r, 1, 1)[0]);
        let b2 = DVector::from_fn(4, |_, _| 3.0 * normal_matrix(&mut r, 1, 1)[0]);
        let mid = &b1 * t + &b2 * (1.0 - t);
        prop_assert!(loglik(&mid, &x, &y) >= t * loglik(&b1, &x, &y) + (1.0 - t) * loglik(&b2, &x, &y) - 1e-9);
    }

    #[test]
    fn probabilities_are_monotone_in_eta(mut etas in prop::collection::vec(-50.0f64..50.0, 2..20)) {
        etas.sort_by(f64::total_cmp);
        let x = DMatrix::from_column_slice(etas.len(), 1, &etas);
        let p = predict_probs(&DVector::from_column_slice(&[1.0]), &x);
        prop_assert!(p.windows(2).all(|w| w[0] <= w[1]));
        prop_assert!(p.iter().all(|v| (0.0..=1.0).contains(v)));
    }
}
