//! End-to-end simulation runs: generating models, outcome replicates,
//! method fits under a timeout, result archives and score reports.

use std::collections::HashMap;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{mpsc, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use log::{info, warn};
use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dgp::{build_generating_model, simulate_outcomes, DgpError, GeneratingModel};
use crate::ingest::{fold_split, load_dataset_with, make_folds, process_predictors, Dataset, IngestError, LoadOptions};
use crate::methods::{FitFn, FitInput, Fitted, MethodEntry, MethodRegistry};
use crate::metrics::{compute_metrics, MethodOutput, MetricRecord, DEFAULT_ALPHA};
use crate::scoring::{build_scoreboard, stratify_by_separation, ScoreBoard, ScoreRow, ScoringError, Stratum};
use crate::separation::{detect_separation, SeparationError};

pub const DEFAULT_REPLICATIONS: usize = 100;
pub const DEFAULT_EVAL_FOLDS: usize = 5;
pub const DEFAULT_TIMEOUT_SECONDS: f64 = 300.0;
pub const DEFAULT_REFERENCE: &str = "bma_bic";
pub const RESULTS_FILE: &str = "results.jsonl";
pub const TIMINGS_FILE: &str = "timings.jsonl";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("config error: {0}")]
    Config(String),
    #[error("cannot ingest {path}: {source}")]
    Ingest {
        path: String,
        #[source]
        source: IngestError,
    },
    #[error("no results were produced")]
    EmptyResults,
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("archive error: {0}")]
    Archive(String),
    #[error(transparent)]
    Scoring(#[from] ScoringError),
    #[error(transparent)]
    Dgp(#[from] DgpError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    pub path: PathBuf,
    pub outcome: String,
    /// Identifier in results; defaults to the file stem.
    #[serde(default)]
    pub name: Option<String>,
    /// Columns forced to be treated as categorical.
    #[serde(default)]
    pub categorical: Vec<String>,
    /// Columns forced to be numeric.
    #[serde(default)]
    pub numeric: Vec<String>,
}

impl DatasetSpec {
    pub fn id(&self) -> String {
        self.name.clone().unwrap_or_else(|| {
            self.path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "dataset".into())
        })
    }

    pub fn load(&self) -> Result<Dataset, HarnessError> {
        let opts = LoadOptions {
            categorical: self.categorical.clone(),
            numeric: self.numeric.clone(),
        };
        let wrap = |source| HarnessError::Ingest {
            path: self.path.display().to_string(),
            source,
        };
        let raw = load_dataset_with(&self.path, &self.outcome, &opts).map_err(wrap)?;
        process_predictors(&raw).map_err(wrap)
    }
}

fn default_replications() -> usize {
    DEFAULT_REPLICATIONS
}
fn default_eval_folds() -> usize {
    DEFAULT_EVAL_FOLDS
}
fn default_timeout() -> f64 {
    DEFAULT_TIMEOUT_SECONDS
}
fn default_threshold() -> usize {
    crate::bma::ENUMERATION_THRESHOLD
}
fn default_reference() -> String {
    DEFAULT_REFERENCE.to_string()
}
fn default_true() -> bool {
    true
}

/// Run configuration, read from TOML.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationConfig {
    pub datasets: Vec<DatasetSpec>,
    pub methods: Vec<String>,
    #[serde(default = "default_replications")]
    pub replications: usize,
    #[serde(default = "default_eval_folds")]
    pub eval_folds: usize,
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default = "default_timeout")]
    pub timeout_seconds: f64,
    #[serde(default = "default_threshold")]
    pub enumeration_threshold: usize,
    #[serde(default = "default_reference")]
    pub reference_method: String,
    /// Hard-selection methods report `[0, 0]` intervals for excluded slopes;
    /// when false they report no intervals at all.
    #[serde(default = "default_true")]
    pub degenerate_intervals: bool,
    /// Worker threads; defaults to the available parallelism.
    #[serde(default)]
    pub threads: Option<usize>,
}

impl SimulationConfig {
    pub fn from_toml_str(s: &str) -> Result<Self, HarnessError> {
        toml::from_str(s).map_err(|e| HarnessError::Config(e.to_string()))
    }

    /// Reads a config file; relative dataset paths resolve against the
    /// file's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, HarnessError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)
            .map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_toml_str(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        for d in &mut cfg.datasets {
            if d.path.is_relative() {
                d.path = base.join(&d.path);
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self, registry: &MethodRegistry) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::Config(m));
        if self.replications < 1 {
            return bad("replications must be at least 1".into());
        }
        if self.eval_folds < 2 {
            return bad("eval_folds must be at least 2".into());
        }
        if self.methods.is_empty() {
            return bad("no methods configured".into());
        }
        if self.datasets.is_empty() {
            return bad("no datasets configured".into());
        }
        if !(self.timeout_seconds > 0.0) {
            return bad("timeout_seconds must be positive".into());
        }
        for m in &self.methods {
            if !registry.contains(m) {
                return bad(format!("unknown method {m:?}"));
            }
        }
        let mut seen = std::collections::BTreeSet::new();
        for m in &self.methods {
            if !seen.insert(m) {
                return bad(format!("method {m:?} listed twice"));
            }
        }
        let mut ids = std::collections::BTreeSet::new();
        for d in &self.datasets {
            if !ids.insert(d.id()) {
                return bad(format!("dataset id {:?} used twice", d.id()));
            }
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form of the config.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        let digest = Sha256::digest(json.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn settings(&self) -> RunSettings {
        RunSettings {
            methods: self.methods.clone(),
            replications: self.replications,
            eval_folds: self.eval_folds,
            master_seed: self.master_seed,
            timeout: Duration::from_secs_f64(self.timeout_seconds),
            enumeration_threshold: self.enumeration_threshold,
            degenerate_intervals: self.degenerate_intervals,
            threads: self.threads,
        }
    }
}

/// The parts of a config that drive a single dataset's runs.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSettings {
    pub methods: Vec<String>,
    pub replications: usize,
    pub eval_folds: usize,
    pub master_seed: u64,
    pub timeout: Duration,
    pub enumeration_threshold: usize,
    pub degenerate_intervals: bool,
    pub threads: Option<usize>,
}

impl RunSettings {
    fn worker_count(&self) -> usize {
        self.threads
            .unwrap_or_else(|| thread::available_parallelism().map_or(1, |n| n.get()))
            .max(1)
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Stable seed for one work unit: FNV-1a over the unit's coordinates,
/// finished with a splitmix64 mix.
pub fn unit_seed(master: u64, dataset: &str, replication: usize, method: &str, fold: usize) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    let mut feed = |bytes: &[u8]| {
        for &b in bytes {
            h ^= b as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
        h ^= 0xff;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    };
    feed(&master.to_le_bytes());
    feed(dataset.as_bytes());
    feed(&(replication as u64).to_le_bytes());
    feed(method.as_bytes());
    feed(&(fold as u64).to_le_bytes());
    splitmix64(h)
}

/// Held-out Brier ingredients for one evaluation fold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldBrier {
    pub n: usize,
    pub sse: f64,
}

/// One (dataset, replication, method) result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRecord {
    pub dataset: String,
    pub replication: usize,
    pub method: String,
    pub seed: u64,
    pub separated: bool,
    pub fold_brier: Vec<FoldBrier>,
    pub metrics: MetricRecord,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingRecord {
    pub dataset: String,
    pub replication: usize,
    pub method: String,
    pub cpu_seconds: f64,
}

/// Runs `fit` on its own thread and waits at most `timeout`. Panics and
/// timeouts become errors; a timed-out thread is left to finish on its own.
pub fn timed_fit(fit: FitFn, input: FitInput, timeout: Duration) -> (Result<Fitted, String>, f64) {
    let (tx, rx) = mpsc::channel();
    let start = Instant::now();
    let spawned = thread::Builder::new().name("fit".into()).spawn(move || {
        let r = catch_unwind(AssertUnwindSafe(|| fit(&input)));
        let _ = tx.send(r);
    });
    if let Err(e) = spawned {
        return (Err(format!("cannot start fit thread: {e}")), 0.0);
    }
    let out = match rx.recv_timeout(timeout) {
        Ok(Ok(r)) => r,
        Ok(Err(_)) | Err(mpsc::RecvTimeoutError::Disconnected) => Err("fit panicked".into()),
        Err(mpsc::RecvTimeoutError::Timeout) => Err(format!("timed out after {:.1} s", timeout.as_secs_f64())),
    };
    (out, start.elapsed().as_secs_f64().max(1e-9))
}

/// Outcome replicate with its evaluation folds and separation verdict.
#[derive(Debug, Clone)]
pub struct ReplicateContext {
    pub replication: usize,
    pub data: Dataset,
    pub folds: Vec<usize>,
    pub eval_folds: usize,
    /// True when any evaluation fold's training data are separated.
    pub separated: bool,
}

impl ReplicateContext {
    pub fn new(replication: usize, data: Dataset, eval_folds: usize, fold_seed: u64) -> Result<Self, HarnessError> {
        let y: Vec<f64> = data.y.iter().copied().collect();
        let folds = make_folds(&y, eval_folds, fold_seed, false).map_err(|e| HarnessError::Config(e.to_string()))?;
        let separated = (0..eval_folds).any(|f| {
            let (train, _) = fold_split(&folds, f);
            let part = data.subset_rows(&train);
            match detect_separation(&part.x, &part.y) {
                Ok(rep) => rep.separated,
                Err(SeparationError::SingleClass) => true,
                Err(e) => {
                    warn!("separation check failed on fold {f}: {e}");
                    false
                }
            }
        });
        Ok(ReplicateContext {
            replication,
            data,
            folds,
            eval_folds,
            separated,
        })
    }
}

fn check_fitted(f: &Fitted, p: usize) -> Result<(), String> {
    if f.beta.len() != p + 1 || f.inclusion.len() != p {
        return Err("output has the wrong dimension".into());
    }
    if f.beta.iter().chain(&f.inclusion).any(|v| !v.is_finite()) {
        return Err("non-finite estimates".into());
    }
    if let Some((lo, hi)) = &f.ci {
        if lo.len() != p + 1 || hi.len() != p + 1 || lo.iter().zip(hi).any(|(l, h)| !(l <= h)) {
            return Err("invalid intervals".into());
        }
    }
    Ok(())
}

/// Full-data fit plus held-out fold fits for one method on one replicate.
pub fn run_method(
    entry: &MethodEntry,
    ctx: &ReplicateContext,
    dataset_id: &str,
    settings: &RunSettings,
) -> (MethodOutput, Option<String>, u64) {
    let p = ctx.data.p();
    let k = ctx.eval_folds;
    let master = settings.master_seed;
    let full_seed = unit_seed(master, dataset_id, ctx.replication, &entry.name, k);
    let mut cpu = 0.0;

    let input = FitInput {
        x: ctx.data.x.clone(),
        y: ctx.data.y.clone(),
        seed: full_seed,
        enumeration_threshold: settings.enumeration_threshold,
        summaries: true,
    };
    let (res, secs) = timed_fit(entry.fit.clone(), input, settings.timeout);
    cpu += secs;
    let full = match res.and_then(|f| check_fitted(&f, p).map(|_| f)) {
        Ok(f) => f,
        Err(e) => return (MethodOutput::failure(cpu), Some(format!("full fit: {e}")), full_seed),
    };

    let mut test_probs = Vec::with_capacity(k);
    for fold in 0..k {
        let (train, test) = fold_split(&ctx.folds, fold);
        let tr = ctx.data.subset_rows(&train);
        let input = FitInput {
            x: tr.x,
            y: tr.y,
            seed: unit_seed(master, dataset_id, ctx.replication, &entry.name, fold),
            enumeration_threshold: settings.enumeration_threshold,
            summaries: false,
        };
        let (res, secs) = timed_fit(entry.fit.clone(), input, settings.timeout);
        cpu += secs;
        match res {
            Ok(f) => {
                let probs = f.predictor.predict(&ctx.data.x.select_rows(&test));
                if probs.iter().any(|v| !v.is_finite()) {
                    return (MethodOutput::failure(cpu), Some(format!("fold {fold}: non-finite predictions")), full_seed);
                }
                test_probs.push(probs);
            }
            Err(e) => return (MethodOutput::failure(cpu), Some(format!("fold {fold}: {e}")), full_seed),
        }
    }

    let ci = if entry.hard_selection && !settings.degenerate_intervals {
        None
    } else {
        full.ci
    };
    let (ci_lower, ci_upper) = match ci {
        Some((l, u)) => (Some(l), Some(u)),
        None => (None, None),
    };
    let out = MethodOutput {
        beta_hat: full.beta,
        ci_lower,
        ci_upper,
        inclusion_score: full.inclusion,
        test_probs,
        cpu_seconds: cpu,
        failed: false,
    };
    (out, None, full_seed)
}

fn run_parallel<T: Send, F: Fn(usize) -> T + Sync>(n: usize, threads: usize, f: F) -> Vec<T> {
    let next = AtomicUsize::new(0);
    let sink: Mutex<Vec<Option<T>>> = Mutex::new((0..n).map(|_| None).collect());
    thread::scope(|s| {
        for _ in 0..threads.min(n).max(1) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= n {
                    break;
                }
                let r = f(i);
                sink.lock().expect("result sink")[i] = Some(r);
            });
        }
    });
    sink.into_inner()
        .expect("result sink")
        .into_iter()
        .map(|o| o.expect("every unit ran"))
        .collect()
}

/// Simulates replicates from `gm` and runs every configured method on each.
/// Records come back in (replication, method) order.
pub fn run_generating_model(
    dataset_id: &str,
    base: &Dataset,
    gm: &GeneratingModel,
    settings: &RunSettings,
    registry: &MethodRegistry,
) -> Result<Vec<(ResultRecord, TimingRecord)>, HarnessError> {
    let entries: Vec<&MethodEntry> = settings
        .methods
        .iter()
        .map(|m| registry.get(m).ok_or_else(|| HarnessError::Config(format!("unknown method {m:?}"))))
        .collect::<Result<_, _>>()?;
    let master = settings.master_seed;
    let outcomes = simulate_outcomes(gm, settings.replications, unit_seed(master, dataset_id, 0, "outcomes", 0));
    let contexts: Vec<ReplicateContext> = outcomes
        .into_iter()
        .enumerate()
        .map(|(r, y)| {
            let fold_seed = unit_seed(master, dataset_id, r, "folds", 0);
            ReplicateContext::new(r, base.with_outcome(y), settings.eval_folds, fold_seed)
        })
        .collect::<Result<_, _>>()?;

    let units: Vec<(usize, usize)> = (0..contexts.len())
        .flat_map(|r| (0..entries.len()).map(move |m| (r, m)))
        .collect();
    let beta_true = &gm.beta_dgm;
    Ok(run_parallel(units.len(), settings.worker_count(), |u| {
        let (r, m) = units[u];
        let ctx = &contexts[r];
        let entry = entries[m];
        let (out, error, seed) = run_method(entry, ctx, dataset_id, settings);
        let outcomes_by_fold: Vec<Vec<f64>> = (0..ctx.eval_folds)
            .map(|f| fold_split(&ctx.folds, f).1.iter().map(|&i| ctx.data.y[i]).collect())
            .collect();
        let metrics = compute_metrics(&out, beta_true, &outcomes_by_fold, DEFAULT_ALPHA);
        let fold_brier = out
            .test_probs
            .iter()
            .zip(&outcomes_by_fold)
            .map(|(p, o)| FoldBrier {
                n: p.len(),
                sse: p.iter().zip(o).map(|(a, b)| (a - b).powi(2)).sum(),
            })
            .collect();
        (
            ResultRecord {
                dataset: dataset_id.to_string(),
                replication: r,
                method: entry.name.clone(),
                seed,
                separated: ctx.separated,
                fold_brier,
                metrics,
                error,
            },
            TimingRecord {
                dataset: dataset_id.to_string(),
                replication: r,
                method: entry.name.clone(),
                cpu_seconds: out.cpu_seconds,
            },
        )
    }))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub id: String,
    pub n: usize,
    pub p: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub selected: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pseudo_r2: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub separation_handled: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub separated_replicates: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub skipped: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: String,
    pub config_hash: String,
    pub master_seed: u64,
    pub methods: Vec<String>,
    pub replications: usize,
    pub eval_folds: usize,
    pub reference_method: String,
    pub n_records: usize,
    pub datasets: Vec<DatasetManifest>,
}

fn write_jsonl<T: Serialize>(path: &Path, items: impl IntoIterator<Item = T>) -> Result<(), HarnessError> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    for it in items {
        serde_json::to_writer(&mut w, &it).map_err(|e| HarnessError::Archive(e.to_string()))?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), HarnessError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| HarnessError::Archive(e.to_string()))?;
    fs::write(path, text + "\n")?;
    Ok(())
}

/// Full run: for each dataset build the generating model, simulate, fit
/// every method, and write `results.jsonl`, `timings.jsonl`,
/// `manifest.json` and one generating-model document per dataset into
/// `out_dir`. Returns the path of the results file.
pub fn run_simulation(
    config: &SimulationConfig,
    registry: &MethodRegistry,
    out_dir: &Path,
) -> Result<PathBuf, HarnessError> {
    config.validate(registry)?;
    let settings = config.settings();
    fs::create_dir_all(out_dir.join("dgm"))?;
    let mut records = Vec::new();
    let mut timings = Vec::new();
    let mut manifests = Vec::new();
    for spec in &config.datasets {
        let id = spec.id();
        let data = spec.load()?;
        let mut dm = DatasetManifest {
            id: id.clone(),
            n: data.n(),
            p: data.p(),
            selected: None,
            pseudo_r2: None,
            separation_handled: None,
            separated_replicates: None,
            skipped: None,
        };
        let gm = match build_generating_model(&data) {
            Ok(gm) => gm,
            Err(e) => {
                warn!("dataset {id} skipped: {e}");
                dm.skipped = Some(e.to_string());
                manifests.push(dm);
                continue;
            }
        };
        write_json(&out_dir.join("dgm").join(format!("{id}.json")), &gm)?;
        info!("dataset {id}: n = {}, p = {}, {} predictors in the generating model", data.n(), data.p(), gm.selected.len());
        let out = run_generating_model(&id, &data, &gm, &settings, registry)?;
        let mut sep = std::collections::BTreeSet::new();
        for (r, t) in out {
            if r.separated {
                sep.insert(r.replication);
            }
            records.push(r);
            timings.push(t);
        }
        dm.selected = Some(gm.names.clone());
        dm.pseudo_r2 = Some(gm.pseudo_r2);
        dm.separation_handled = Some(gm.separation_handled);
        dm.separated_replicates = Some(sep.len());
        manifests.push(dm);
    }
    let manifest = Manifest {
        version: env!("CARGO_PKG_VERSION").to_string(),
        config_hash: config.hash(),
        master_seed: config.master_seed,
        methods: config.methods.clone(),
        replications: config.replications,
        eval_folds: config.eval_folds,
        reference_method: config.reference_method.clone(),
        n_records: records.len(),
        datasets: manifests,
    };
    write_json(&out_dir.join(MANIFEST_FILE), &manifest)?;
    if records.is_empty() {
        return Err(HarnessError::EmptyResults);
    }
    let results = out_dir.join(RESULTS_FILE);
    write_jsonl(&results, &records)?;
    write_jsonl(&out_dir.join(TIMINGS_FILE), &timings)?;
    Ok(results)
}

fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, HarnessError> {
    let f = fs::File::open(path)?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line)
                .map_err(|e| HarnessError::Archive(format!("{}:{}: {e}", path.display(), i + 1)))?,
        );
    }
    Ok(out)
}

/// Result records of an archive directory (or a results file).
pub fn read_results(archive: &Path) -> Result<Vec<ResultRecord>, HarnessError> {
    let file = if archive.is_dir() { archive.join(RESULTS_FILE) } else { archive.to_path_buf() };
    read_jsonl(&file)
}

/// Records joined with their timings, ready for scoring.
pub fn read_archive(archive: &Path) -> Result<Vec<ScoreRow>, HarnessError> {
    let records = read_results(archive)?;
    let dir = if archive.is_dir() {
        archive.to_path_buf()
    } else {
        archive.parent().unwrap_or(Path::new(".")).to_path_buf()
    };
    let timing_path = dir.join(TIMINGS_FILE);
    let timings: HashMap<(String, usize, String), f64> = if timing_path.exists() {
        read_jsonl::<TimingRecord>(&timing_path)?
            .into_iter()
            .map(|t| ((t.dataset, t.replication, t.method), t.cpu_seconds))
            .collect()
    } else {
        HashMap::new()
    };
    Ok(records
        .into_iter()
        .map(|r| {
            let mut metrics = r.metrics;
            if let Some(s) = timings.get(&(r.dataset.clone(), r.replication, r.method.clone())) {
                metrics.cpu_minutes = s / 60.0;
            }
            ScoreRow {
                dataset: r.dataset,
                replication: r.replication,
                method: r.method,
                metrics,
                separated: r.separated,
            }
        })
        .collect())
}

/// Score boards of an archive plus notices about omitted strata or a
/// substituted reference.
#[derive(Debug, Clone)]
pub struct Report {
    pub boards: Vec<ScoreBoard>,
    pub notices: Vec<String>,
}

/// Scores an archive. The reference falls back to the first method in the
/// archive when the requested one has no records.
pub fn score_archive(archive: &Path, reference: &str, stratify: bool) -> Result<Report, HarnessError> {
    let rows = read_archive(archive)?;
    if rows.is_empty() {
        return Err(HarnessError::EmptyResults);
    }
    let mut notices = Vec::new();
    let reference = if rows.iter().any(|r| r.method == reference) {
        reference.to_string()
    } else {
        let fallback = rows[0].method.clone();
        notices.push(format!("reference {reference:?} not in archive; using {fallback:?}"));
        fallback
    };
    let mut boards = Vec::new();
    if stratify {
        let (with, without) = stratify_by_separation(&rows, &reference)?;
        for (b, s) in [(with, Stratum::WithSeparation), (without, Stratum::WithoutSeparation)] {
            match b {
                Some(b) => boards.push(b),
                None => notices.push(format!("stratum {} is empty and was omitted", s.name())),
            }
        }
    } else {
        boards.push(build_scoreboard(&rows, &reference, Stratum::All)?);
    }
    Ok(Report { boards, notices })
}

/// Writes `scoreboard_<stratum>.csv`, `heatmap_<stratum>.svg` and one
/// `report.md` into `out_dir`.
pub fn render_report(report: &Report, out_dir: &Path, svg: bool) -> Result<Vec<PathBuf>, HarnessError> {
    fs::create_dir_all(out_dir)?;
    let mut written = Vec::new();
    let mut md = String::from("# Method comparison\n\n");
    for n in &report.notices {
        md.push_str(&format!("> {n}\n\n"));
    }
    for b in &report.boards {
        let csv_path = out_dir.join(format!("scoreboard_{}.csv", b.stratum.name()));
        b.write_csv(fs::File::create(&csv_path)?)?;
        written.push(csv_path);
        if svg {
            let svg_path = out_dir.join(format!("heatmap_{}.svg", b.stratum.name()));
            fs::write(&svg_path, b.to_svg())?;
            written.push(svg_path);
        }
        md.push_str(&b.to_markdown());
        md.push('\n');
    }
    let md_path = out_dir.join("report.md");
    fs::write(&md_path, md)?;
    written.push(md_path);
    Ok(written)
}

/// Summary printed by the `ingest` command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestSummary {
    pub n: usize,
    pub p: usize,
    pub events: usize,
    pub predictors: Vec<String>,
}

pub fn ingest_summary(data: &Dataset) -> IngestSummary {
    IngestSummary {
        n: data.n(),
        p: data.p(),
        events: data.y.iter().filter(|&&v| v > 0.5).count(),
        predictors: data.names.clone(),
    }
}

/// Generating model from known coefficients on a given design, for
/// synthetic benchmarks. `beta` is intercept-first.
pub fn known_generating_model(data: &Dataset, beta: &[f64]) -> GeneratingModel {
    use crate::dgp::ETA_CLIP;
    use crate::glm::prob;
    let design = crate::glm::with_intercept(&data.x);
    let eta = &design * DVector::from_column_slice(beta);
    let selected: Vec<usize> = (0..data.p()).filter(|&j| beta[j + 1] != 0.0).collect();
    GeneratingModel {
        names: selected.iter().map(|&j| data.names[j].clone()).collect(),
        selected,
        beta_dgm: beta.to_vec(),
        pi: eta.iter().map(|e| prob(e.clamp(-ETA_CLIP, ETA_CLIP))).collect(),
        pseudo_r2: 0.0,
        separation_handled: false,
    }
}
