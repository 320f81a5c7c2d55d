use std::collections::HashSet;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use logitsel::harness::{
    read_archive, read_results, render_report, run_method, run_simulation, score_archive, unit_seed, DatasetSpec,
    ReplicateContext, SimulationConfig, RESULTS_FILE,
};
use logitsel::ingest::{load_dataset, process_predictors};
use logitsel::methods::{FitFn, MethodRegistry};
use logitsel::scoring::{ScoreBoard, Stratum};

fn data_path(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data").join(name)
}

fn config(methods: &[&str], replications: usize) -> SimulationConfig {
    let mut cfg = SimulationConfig::from_toml_str(&format!(
        "methods = {methods:?}\nreplications = {replications}\neval_folds = 3\nmaster_seed = 77\nreference_method = {:?}\ndatasets = []\n",
        methods[0]
    ))
    .unwrap();
    cfg.datasets.push(DatasetSpec {
        path: data_path("burn_like.csv"),
        outcome: "death".into(),
        name: Some("burn".into()),
        categorical: Vec::new(),
        numeric: Vec::new(),
    });
    cfg
}

#[test]
fn toy_run_is_complete_and_reproducible() {
    let cfg = config(&["p05", "lasso"], 3);
    let reg = MethodRegistry::default();
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    run_simulation(&cfg, &reg, a.path()).unwrap();
    run_simulation(&cfg, &reg, b.path()).unwrap();
    let records = read_results(a.path()).unwrap();
    assert_eq!(records.len(), 6);
    assert!(records.iter().all(|r| r.error.is_none() && !r.metrics.failed));
    let text = |d: &Path| std::fs::read(d.join(RESULTS_FILE)).unwrap();
    assert_eq!(text(a.path()), text(b.path()));

    let rows = read_archive(a.path()).unwrap();
    let limit = cfg.timeout_seconds / 60.0 * (cfg.eval_folds + 1) as f64;
    assert!(rows.iter().all(|r| r.metrics.cpu_minutes > 0.0 && r.metrics.cpu_minutes <= limit));
}

#[test]
fn slow_and_panicking_methods_fail_alone() {
    let mut reg = MethodRegistry::default();
    let slow: FitFn = Arc::new(|_| {
        std::thread::sleep(Duration::from_secs(2));
        Err("late".into())
    });
    let boom: FitFn = Arc::new(|_| panic!("boom"));
    reg.register("slow", false, slow);
    reg.register("boom", false, boom);
    let mut cfg = config(&["p05", "slow", "boom"], 2);
    cfg.timeout_seconds = 0.2;
    let dir = tempfile::tempdir().unwrap();
    run_simulation(&cfg, &reg, dir.path()).unwrap();
    let records = read_results(dir.path()).unwrap();
    assert_eq!(records.len(), 6);
    for r in &records {
        match r.method.as_str() {
            "p05" => assert!(!r.metrics.failed),
            "slow" => assert!(r.metrics.failed && r.error.as_deref().unwrap().contains("timed out")),
            _ => assert!(r.metrics.failed && r.error.as_deref().unwrap().contains("panicked")),
        }
    }
}

#[test]
fn unit_seeds_do_not_collide() {
    let mut seen = HashSet::new();
    for d in ["burn", "other"] {
        for rep in 0..100 {
            for m in ["lasso", "p05", "bma_bic", "firth"] {
                for fold in 0..6 {
                    assert!(seen.insert(unit_seed(1, d, rep, m, fold)));
                }
            }
        }
    }
}

#[test]
fn methods_on_clean_and_separated_replicates() {
    let reg = MethodRegistry::default();
    let settings = config(&["lasso"], 1).settings();
    let burn = process_predictors(&load_dataset(data_path("burn_like.csv"), "death").unwrap()).unwrap();
    let ctx = ReplicateContext::new(0, burn.clone(), 5, 3).unwrap();
    let (out, err, _) = run_method(reg.get("lasso").unwrap(), &ctx, "burn", &settings);
    assert!(err.is_none() && !out.failed);
    let covered: usize = out.test_probs.iter().map(Vec::len).sum();
    assert_eq!(covered, burn.n());
    assert!(out.ci_lower.is_none());

    let sep = process_predictors(&load_dataset(data_path("separated_small.csv"), "y").unwrap()).unwrap();
    let ctx = ReplicateContext::new(0, sep, 5, 3).unwrap();
    assert!(ctx.separated);
    let (out, err, _) = run_method(reg.get("backward").unwrap(), &ctx, "sep", &settings);
    assert!(out.failed && err.is_some());
    let (out, _, _) = run_method(reg.get("firth").unwrap(), &ctx, "sep", &settings);
    assert!(!out.failed);
}

#[test]
fn reports_from_an_archive() {
    let cfg = config(&["p05"], 2);
    let dir = tempfile::tempdir().unwrap();
    run_simulation(&cfg, &MethodRegistry::default(), dir.path()).unwrap();

    // the requested reference is missing, so the only method stands in
    let report = score_archive(dir.path(), "bma_bic", false).unwrap();
    assert_eq!(report.notices.len(), 1);
    let row = &report.boards[0].rows[0];
    assert!(row.ratios.iter().all(|r| *r == Some(1.0)));

    let strat = score_archive(dir.path(), "p05", true).unwrap();
    assert_eq!(strat.boards.len() + strat.notices.len(), 2);
    assert!(strat.boards.iter().all(|b| b.stratum != Stratum::All));

    let out = tempfile::tempdir().unwrap();
    let written = render_report(&report, out.path(), true).unwrap();
    assert!(written.iter().any(|p| p.ends_with("report.md")));
    let csv = std::fs::File::open(out.path().join("scoreboard_all.csv")).unwrap();
    let back = ScoreBoard::read_csv_rows(csv).unwrap();
    let orig = &report.boards[0].rows;
    assert_eq!(back.len(), orig.len());
    for (a, b) in back.iter().zip(orig) {
        assert_eq!(a.method, b.method);
        assert_eq!(a.rank, b.rank);
        assert!((a.cpu_minutes_total - b.cpu_minutes_total).abs() < 1e-9);
        assert!((a.failure_proportion - b.failure_proportion).abs() < 1e-9);
        for k in 0..4 {
            assert!((a.ratios[k].unwrap() - b.ratios[k].unwrap()).abs() < 1e-9);
        }
    }
}

#[test]
fn invalid_configs_are_rejected() {
    let reg = MethodRegistry::default();
    let mut cfg = config(&["p05"], 1);
    cfg.eval_folds = 1;
    assert!(run_simulation(&cfg, &reg, tempfile::tempdir().unwrap().path()).is_err());
    let mut cfg = config(&["p05", "p05"], 1);
    cfg.replications = 1;
    assert!(cfg.validate(&reg).is_err());
}
