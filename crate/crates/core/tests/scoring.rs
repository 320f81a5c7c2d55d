use logitsel::metrics::MetricRecord;
use logitsel::scoring::{
    build_scoreboard, compose_scores, ratio, stratify_by_separation, stratum_sizes, Metric, ScoreRow, Stratum,
};

fn record(v: f64, failed: bool) -> MetricRecord {
    MetricRecord {
        rmse: (!failed).then_some(v),
        mis: (!failed).then_some(2.0 * v),
        auprc: (!failed).then_some(1.0 / (1.0 + v)),
        brier: (!failed).then_some(0.1 * v),
        cpu_minutes: 0.01,
        failed,
    }
}

fn rows() -> Vec<ScoreRow> {
    let mut out = Vec::new();
    for d in ["a", "b"] {
        for rep in 0..50 {
            for (method, v) in [("ref", 1.0), ("good", 0.8), ("bad", 1.5)] {
                out.push(ScoreRow {
                    dataset: d.into(),
                    replication: rep,
                    method: method.into(),
                    metrics: record(v + 0.01 * rep as f64, method == "bad" && rep % 10 == 0),
                    separated: rep % 3 == 0 && d == "a",
                });
            }
        }
    }
    out
}

#[test]
fn reference_scores_one_and_ranks_follow_partial_score() {
    let board = build_scoreboard(&rows(), "ref", Stratum::All).unwrap();
    let r = board.rows.iter().find(|r| r.method == "ref").unwrap();
    assert!(r.ratios.iter().all(|v| *v == Some(1.0)));
    assert_eq!(r.scores.partial, Some(1.0));
    let names: Vec<&str> = board.rows.iter().map(|r| r.method.as_str()).collect();
    assert_eq!(names, ["good", "ref", "bad"]);
    assert_eq!(board.rows.iter().map(|r| r.rank).collect::<Vec<_>>(), [1, 2, 3]);
}

#[test]
fn failures_are_counted_and_excluded_from_means() {
    let board = build_scoreboard(&rows(), "ref", Stratum::All).unwrap();
    let bad = board.rows.iter().find(|r| r.method == "bad").unwrap();
    assert!((bad.failure_proportion - 0.1).abs() < 1e-12);
    assert_eq!(bad.n_records, 100);
    let always = rows()
        .into_iter()
        .map(|mut r| {
            if r.method == "bad" {
                r.metrics = record(0.0, true);
            }
            r
        })
        .collect::<Vec<_>>();
    let board = build_scoreboard(&always, "ref", Stratum::All).unwrap();
    let bad = board.rows.iter().find(|r| r.method == "bad").unwrap();
    assert_eq!(bad.failure_proportion, 1.0);
    assert!(bad.ratios.iter().all(Option::is_none));
    assert_eq!(bad.scores.partial, None);
    assert_eq!(bad.rank, 3);
}

#[test]
fn record_order_does_not_matter() {
    let mut shuffled = rows();
    shuffled.reverse();
    shuffled.rotate_left(37);
    assert_eq!(
        build_scoreboard(&rows(), "ref", Stratum::All).unwrap(),
        build_scoreboard(&shuffled, "ref", Stratum::All).unwrap()
    );
}

#[test]
fn swapping_the_reference_inverts_ratios() {
    let a = build_scoreboard(&rows(), "ref", Stratum::All).unwrap();
    let b = build_scoreboard(&rows(), "good", Stratum::All).unwrap();
    let good_vs_ref = a.rows.iter().find(|r| r.method == "good").unwrap();
    let ref_vs_good = b.rows.iter().find(|r| r.method == "ref").unwrap();
    for k in 0..4 {
        let prod = good_vs_ref.ratios[k].unwrap() * ref_vs_good.ratios[k].unwrap();
        assert!((prod - 1.0).abs() < 1e-12);
    }
}

#[test]
fn separation_strata() {
    let rows = rows();
    assert_eq!(stratum_sizes(&rows), (17, 83));
    let (with, without) = stratify_by_separation(&rows, "ref").unwrap();
    assert_eq!(with.unwrap().stratum, Stratum::WithSeparation);
    assert_eq!(without.unwrap().stratum, Stratum::WithoutSeparation);

    let mut custom = Vec::new();
    for rep in 0..100 {
        for m in ["ref", "good"] {
            custom.push(ScoreRow {
                dataset: "d".into(),
                replication: rep,
                method: m.into(),
                metrics: record(1.0, false),
                separated: rep < 34,
            });
        }
    }
    assert_eq!(stratum_sizes(&custom), (34, 66));
    for r in &mut custom {
        r.separated = false;
    }
    let (with, without) = stratify_by_separation(&custom, "ref").unwrap();
    assert!(with.is_none() && without.is_some());
}

#[test]
fn score_composition() {
    let s = compose_scores(&[Some(2.0), Some(0.5), Some(4.0), Some(0.25)]);
    assert!((s.full.unwrap() - 1.0).abs() < 1e-12);
    assert!((s.partial.unwrap() - 0.5f64.sqrt()).abs() < 1e-12);
    let s = compose_scores(&[Some(2.0), None, Some(8.0), Some(0.5)]);
    assert_eq!(s.full, None);
    assert!((s.available.unwrap() - 2.0).abs() < 1e-12);
    assert!((s.partial.unwrap() - 1.0).abs() < 1e-12);
    assert!((ratio(Metric::Auprc, 0.5, 1.0) - 2.0).abs() < 1e-12);
    assert!((ratio(Metric::Rmse, 0.5, 1.0) - 0.5).abs() < 1e-12);
}
