mod common;

use common::*;
use logitsel::glm::with_intercept;
use logitsel::separation::{detect_separation, SeparationKind};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::Rng;

fn verdict(x: &DMatrix<f64>, y: &DVector<f64>) -> Verdict {
    match detect_separation(x, y).unwrap().kind {
        None => Verdict::None,
        Some(SeparationKind::Complete) => Verdict::Complete,
        Some(SeparationKind::QuasiComplete) => Verdict::Quasi,
    }
}

fn small_instance(seed: u64) -> Option<(DMatrix<f64>, DVector<f64>)> {
    let mut r = rng(seed);
    let n = r.random_range(4..=8);
    let p = r.random_range(1..=2);
    let x = DMatrix::from_fn(n, p, |_, _| r.random_range(-2..=2) as f64);
    let y = DVector::from_fn(n, |_, _| r.random_range(0..=1) as f64);
    has_both_classes(&y).then_some((x, y))
}

#[test]
fn agrees_with_vertex_enumeration() {
    let mut checked = 0;
    for seed in 0..300u64 {
        let Some((x, y)) = small_instance(seed) else { continue };
        assert_eq!(verdict(&x, &y), brute_force_separation(&with_intercept(&x), &y), "seed {seed}");
        checked += 1;
    }
    assert!(checked > 200);
}

#[test]
fn certificates_separate() {
    for seed in 0..100u64 {
        let Some((x, y)) = small_instance(seed) else { continue };
        let rep = detect_separation(&x, &y).unwrap();
        let Some(cert) = rep.certificate else { continue };
        let d = with_intercept(&x);
        let margins: Vec<f64> = (0..d.nrows())
            .map(|i| {
                let m: f64 = (0..d.ncols()).map(|j| d[(i, j)] * cert[j]).sum();
                if y[i] > 0.5 { m } else { -m }
            })
            .collect();
        assert!(margins.iter().all(|&m| m >= -1e-7));
        assert!(margins.iter().any(|&m| m > 1e-7));
    }
}

proptest! {
    #[test]
    fn duplicated_row_keeps_verdict(seed in 0u64..10_000, row in 0usize..8) {
        let Some((x, y)) = small_instance(seed) else { return Ok(()) };
        let i = row % x.nrows();
        let x2 = x.clone().insert_row(x.nrows(), 0.0);
        let mut x2 = x2;
        for j in 0..x.ncols() {
            x2[(x.nrows(), j)] = x[(i, j)];
        }
        let y2 = y.clone().push(y[i]);
        prop_assert_eq!(verdict(&x, &y), verdict(&x2, &y2));
    }

    #[test]
    fn label_flip_keeps_verdict(seed in 0u64..10_000) {
        let Some((x, y)) = small_instance(seed) else { return Ok(()) };
        let flipped = y.map(|v| 1.0 - v);
        prop_assert_eq!(verdict(&x, &y), verdict(&x, &flipped));
    }
}
