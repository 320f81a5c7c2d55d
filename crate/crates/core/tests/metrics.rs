use logitsel::metrics::{auprc, brier, compute_metrics, interval_score, mean_interval_score, rmse, MethodOutput};
use proptest::prelude::*;

#[test]
fn worked_examples() {
    assert!((rmse(&[0.0, 1.0, 2.0], &[0.0, 0.0, 0.0]).unwrap() - (5.0f64 / 3.0).sqrt()).abs() < 1e-12);
    assert_eq!(interval_score(-1.0, 1.0, 0.0, 0.05), 2.0);
    assert!((interval_score(0.0, 1.0, 2.0, 0.05) - 41.0).abs() < 1e-12);
    assert_eq!(auprc(&[0.9, 0.8, 0.1], &[true, true, false]).unwrap(), 1.0);
    assert!((brier(&[0.5, 0.5], &[1.0, 0.0]).unwrap() - 0.25).abs() < 1e-15);
}

#[test]
fn failed_output_has_no_metrics() {
    let rec = compute_metrics(&MethodOutput::failure(0.5), &[0.0, 1.0], &[vec![1.0]], 0.05);
    assert!(rec.failed);
    assert!(rec.rmse.is_none() && rec.mis.is_none() && rec.auprc.is_none() && rec.brier.is_none());
}

proptest! {
    #[test]
    fn auprc_ignores_monotone_transforms(
        scores in prop::collection::vec(-3.0f64..3.0, 2..12),
        flags in prop::collection::vec(prop::bool::ANY, 12),
        a in 0.1f64..5.0,
        b in -5.0f64..5.0,
    ) {
        let rel = &flags[..scores.len()];
        prop_assume!(rel.iter().any(|&r| r) && rel.iter().any(|&r| !r));
        let t: Vec<f64> = scores.iter().map(|s| (a * s + b).exp()).collect();
        let u = auprc(&scores, rel).unwrap();
        prop_assert!((u - auprc(&t, rel).unwrap()).abs() < 1e-12);
        prop_assert!((0.0..=1.0).contains(&u));
    }

    #[test]
    fn brier_ignores_row_order(pairs in prop::collection::vec((0.0f64..1.0, prop::bool::ANY), 1..30), shift in 0usize..30) {
        let p: Vec<f64> = pairs.iter().map(|x| x.0).collect();
        let y: Vec<f64> = pairs.iter().map(|x| x.1 as u8 as f64).collect();
        let k = shift % p.len();
        let (mut p2, mut y2) = (p.clone(), y.clone());
        p2.rotate_left(k);
        y2.rotate_left(k);
        p2.reverse();
        y2.reverse();
        prop_assert!((brier(&p, &y).unwrap() - brier(&p2, &y2).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn interval_score_decomposes(l in -5.0f64..5.0, w in 0.0f64..5.0, b in -10.0f64..10.0, alpha in 0.01f64..0.5) {
        let u = l + w;
        let expected = w + 2.0 / alpha * (l - b).max(0.0) + 2.0 / alpha * (b - u).max(0.0);
        prop_assert!((interval_score(l, u, b, alpha) - expected).abs() < 1e-9);
        let m = mean_interval_score(&[l, l], &[u, u], &[b, b], alpha).unwrap();
        prop_assert!((m - expected).abs() < 1e-9);
    }
}
