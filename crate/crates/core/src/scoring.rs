//! Reference-relative standardization of metric means and composite scores.
//!
//! For each dataset a method's metric mean is divided by the reference
//! method's mean; ratios are then combined across datasets by geometric
//! mean. A ratio below 1 is better than the reference. AUPRC is oriented
//! the same way by dividing the reference by the method.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::metrics::MetricRecord;

/// Means below this are floored before taking ratios.
pub const RATIO_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ScoringError {
    #[error("reference method {0:?} has no records")]
    ReferenceMissing(String),
    #[error("no records to score")]
    Empty,
    #[error("csv error: {0}")]
    Csv(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Rmse,
    Mis,
    Auprc,
    Brier,
}

impl Metric {
    pub const ALL: [Metric; 4] = [Metric::Rmse, Metric::Mis, Metric::Auprc, Metric::Brier];

    pub fn name(self) -> &'static str {
        match self {
            Metric::Rmse => "rmse",
            Metric::Mis => "mis",
            Metric::Auprc => "auprc",
            Metric::Brier => "brier",
        }
    }

    pub fn higher_is_better(self) -> bool {
        matches!(self, Metric::Auprc)
    }

    fn get(self, r: &MetricRecord) -> Option<f64> {
        match self {
            Metric::Rmse => r.rmse,
            Metric::Mis => r.mis,
            Metric::Auprc => r.auprc,
            Metric::Brier => r.brier,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stratum {
    All,
    WithSeparation,
    WithoutSeparation,
}

impl Stratum {
    pub fn name(self) -> &'static str {
        match self {
            Stratum::All => "all",
            Stratum::WithSeparation => "with_separation",
            Stratum::WithoutSeparation => "without_separation",
        }
    }
}

/// One method's metrics on one replicate of one dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    pub dataset: String,
    pub replication: usize,
    pub method: String,
    pub metrics: MetricRecord,
    pub separated: bool,
}

/// Per (dataset, method) means over non-failed replicates.
#[derive(Debug, Clone, PartialEq)]
pub struct CellSummary {
    pub dataset: String,
    pub method: String,
    pub means: [Option<f64>; 4],
    pub n_total: usize,
    pub n_failed: usize,
    pub cpu_minutes_sum: f64,
}

pub fn summarize_cells(rows: &[ScoreRow]) -> Vec<CellSummary> {
    let mut groups: BTreeMap<(&str, &str), Vec<&ScoreRow>> = BTreeMap::new();
    for r in rows {
        groups.entry((&r.dataset, &r.method)).or_default().push(r);
    }
    groups
        .into_iter()
        .map(|((d, m), mut rs)| {
            // fixed summation order so record order cannot change the means
            rs.sort_by_key(|r| r.replication);
            let ok: Vec<&&ScoreRow> = rs.iter().filter(|r| !r.metrics.failed).collect();
            let means = Metric::ALL.map(|metric| {
                let vals: Vec<f64> = ok.iter().filter_map(|r| metric.get(&r.metrics)).collect();
                (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
            });
            CellSummary {
                dataset: d.to_string(),
                method: m.to_string(),
                means,
                n_total: rs.len(),
                n_failed: rs.len() - ok.len(),
                cpu_minutes_sum: rs.iter().map(|r| r.metrics.cpu_minutes).sum(),
            }
        })
        .collect()
}

fn floored(v: f64, what: &str) -> f64 {
    if v < RATIO_FLOOR {
        warn!("{what} mean {v} floored at {RATIO_FLOOR}");
        RATIO_FLOOR
    } else {
        v
    }
}

/// Per-dataset ratio of a method's mean to the reference's, oriented so
/// that smaller is better.
pub fn ratio(metric: Metric, method_mean: f64, reference_mean: f64) -> f64 {
    let (m, r) = (floored(method_mean, metric.name()), floored(reference_mean, metric.name()));
    if metric.higher_is_better() {
        (r.ln() - m.ln()).exp()
    } else {
        (m.ln() - r.ln()).exp()
    }
}

pub fn geometric_mean(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    Some((values.iter().map(|v| v.ln()).sum::<f64>() / values.len() as f64).exp())
}

/// Geometric-mean ratios per method and metric across datasets. A
/// (dataset, metric) cell contributes only when both the method and the
/// reference have a mean there.
pub fn standardize(cells: &[CellSummary], reference: &str) -> Result<BTreeMap<String, [Option<f64>; 4]>, ScoringError> {
    if cells.is_empty() {
        return Err(ScoringError::Empty);
    }
    let refs: BTreeMap<&str, &CellSummary> = cells
        .iter()
        .filter(|c| c.method == reference)
        .map(|c| (c.dataset.as_str(), c))
        .collect();
    if refs.is_empty() {
        return Err(ScoringError::ReferenceMissing(reference.to_string()));
    }
    let mut per_method: BTreeMap<String, [Vec<f64>; 4]> = BTreeMap::new();
    for c in cells {
        let entry = per_method.entry(c.method.clone()).or_default();
        let Some(r) = refs.get(c.dataset.as_str()) else {
            continue;
        };
        for (k, metric) in Metric::ALL.iter().enumerate() {
            if let (Some(m), Some(rv)) = (c.means[k], r.means[k]) {
                entry[k].push(if c.method == reference { 1.0 } else { ratio(*metric, m, rv) });
            }
        }
    }
    Ok(per_method
        .into_iter()
        .map(|(m, v)| (m, [0, 1, 2, 3].map(|k| geometric_mean(&v[k]))))
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    pub full: Option<f64>,
    pub available: Option<f64>,
    pub partial: Option<f64>,
}

/// Full (all four ratios), available (those present) and partial (RMSE and
/// Brier) geometric means.
pub fn compose_scores(ratios: &[Option<f64>; 4]) -> Scores {
    let present: Vec<f64> = ratios.iter().flatten().copied().collect();
    let full = if present.len() == 4 { geometric_mean(&present) } else { None };
    let partial = match (ratios[0], ratios[3]) {
        (Some(a), Some(b)) => geometric_mean(&[a, b]),
        _ => None,
    };
    Scores {
        full,
        available: geometric_mean(&present),
        partial,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoardRow {
    pub rank: usize,
    pub method: String,
    pub ratios: [Option<f64>; 4],
    pub scores: Scores,
    pub cpu_minutes_mean: f64,
    pub cpu_minutes_total: f64,
    pub failure_proportion: f64,
    pub n_records: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreBoard {
    pub stratum: Stratum,
    pub reference: String,
    /// Ordered by partial score, ascending; methods without one last.
    pub rows: Vec<BoardRow>,
}

/// Sorts rows by partial score (missing last, then by name) and assigns
/// ranks 1..=len.
pub fn rank_rows(rows: &mut [BoardRow]) {
    rows.sort_by(|a, b| match (a.scores.partial, b.scores.partial) {
        (Some(x), Some(y)) => x.total_cmp(&y).then_with(|| a.method.cmp(&b.method)),
        (Some(_), None) => std::cmp::Ordering::Less,
        (None, Some(_)) => std::cmp::Ordering::Greater,
        (None, None) => a.method.cmp(&b.method),
    });
    for (k, r) in rows.iter_mut().enumerate() {
        r.rank = k + 1;
    }
}

pub fn build_scoreboard(rows: &[ScoreRow], reference: &str, stratum: Stratum) -> Result<ScoreBoard, ScoringError> {
    let cells = summarize_cells(rows);
    let ratios = standardize(&cells, reference)?;
    let mut out = Vec::new();
    for (method, r) in ratios {
        let mine: Vec<&CellSummary> = cells.iter().filter(|c| c.method == method).collect();
        let n: usize = mine.iter().map(|c| c.n_total).sum();
        let failed: usize = mine.iter().map(|c| c.n_failed).sum();
        let cpu: f64 = mine.iter().map(|c| c.cpu_minutes_sum).sum();
        out.push(BoardRow {
            rank: 0,
            method,
            ratios: r,
            scores: compose_scores(&r),
            cpu_minutes_mean: if n > 0 { cpu / n as f64 } else { 0.0 },
            cpu_minutes_total: cpu,
            failure_proportion: if n > 0 { failed as f64 / n as f64 } else { 0.0 },
            n_records: n,
        });
    }
    rank_rows(&mut out);
    Ok(ScoreBoard {
        stratum,
        reference: reference.to_string(),
        rows: out,
    })
}

/// Splits rows by the replicate's separation verdict and scores each part.
/// An empty stratum yields `None`.
pub fn stratify_by_separation(
    rows: &[ScoreRow],
    reference: &str,
) -> Result<(Option<ScoreBoard>, Option<ScoreBoard>), ScoringError> {
    let (with, without): (Vec<ScoreRow>, Vec<ScoreRow>) = rows.iter().cloned().partition(|r| r.separated);
    let board = |part: &[ScoreRow], s| -> Result<Option<ScoreBoard>, ScoringError> {
        if part.is_empty() {
            Ok(None)
        } else {
            build_scoreboard(part, reference, s).map(Some)
        }
    };
    Ok((
        board(&with, Stratum::WithSeparation)?,
        board(&without, Stratum::WithoutSeparation)?,
    ))
}

/// Number of distinct (dataset, replication) pairs in each stratum.
pub fn stratum_sizes(rows: &[ScoreRow]) -> (usize, usize) {
    let mut with = BTreeSet::new();
    let mut without = BTreeSet::new();
    for r in rows {
        let key = (r.dataset.as_str(), r.replication);
        if r.separated {
            with.insert(key);
        } else {
            without.insert(key);
        }
    }
    (with.len(), without.len())
}

const CSV_HEADER: [&str; 14] = [
    "stratum",
    "rank",
    "method",
    "rmse_ratio",
    "mis_ratio",
    "auprc_ratio",
    "brier_ratio",
    "full_score",
    "available_score",
    "partial_score",
    "cpu_minutes_mean",
    "cpu_minutes_total",
    "failure_proportion",
    "n_records",
];

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn parse_opt(s: &str) -> Result<Option<f64>, ScoringError> {
    if s.is_empty() {
        return Ok(None);
    }
    s.parse().map(Some).map_err(|e| ScoringError::Csv(format!("{s:?}: {e}")))
}

impl ScoreBoard {
    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<(), ScoringError> {
        let mut wr = csv::Writer::from_writer(w);
        let err = |e: csv::Error| ScoringError::Csv(e.to_string());
        wr.write_record(CSV_HEADER).map_err(err)?;
        for r in &self.rows {
            wr.write_record([
                self.stratum.name().to_string(),
                r.rank.to_string(),
                r.method.clone(),
                opt(r.ratios[0]),
                opt(r.ratios[1]),
                opt(r.ratios[2]),
                opt(r.ratios[3]),
                opt(r.scores.full),
                opt(r.scores.available),
                opt(r.scores.partial),
                r.cpu_minutes_mean.to_string(),
                r.cpu_minutes_total.to_string(),
                r.failure_proportion.to_string(),
                r.n_records.to_string(),
            ])
            .map_err(err)?;
        }
        wr.flush().map_err(|e| ScoringError::Csv(e.to_string()))
    }

    /// Rows of one board back from CSV written by [`ScoreBoard::write_csv`].
    pub fn read_csv_rows<R: std::io::Read>(r: R) -> Result<Vec<BoardRow>, ScoringError> {
        let mut rd = csv::Reader::from_reader(r);
        let mut out = Vec::new();
        for rec in rd.records() {
            let rec = rec.map_err(|e| ScoringError::Csv(e.to_string()))?;
            let f = |i: usize| rec.get(i).unwrap_or("");
            let num = |i: usize| -> Result<f64, ScoringError> {
                parse_opt(f(i))?.ok_or_else(|| ScoringError::Csv(format!("missing column {i}")))
            };
            out.push(BoardRow {
                rank: f(1).parse().map_err(|_| ScoringError::Csv("rank".into()))?,
                method: f(2).to_string(),
                ratios: [parse_opt(f(3))?, parse_opt(f(4))?, parse_opt(f(5))?, parse_opt(f(6))?],
                scores: Scores {
                    full: parse_opt(f(7))?,
                    available: parse_opt(f(8))?,
                    partial: parse_opt(f(9))?,
                },
                cpu_minutes_mean: num(10)?,
                cpu_minutes_total: num(11)?,
                failure_proportion: num(12)?,
                n_records: f(13).parse().map_err(|_| ScoringError::Csv("n_records".into()))?,
            });
        }
        Ok(out)
    }

    pub fn to_markdown(&self) -> String {
        let fmt = |v: Option<f64>| v.map(|x| format!("{x:.3}")).unwrap_or_else(|| "-".into());
        let mut s = String::new();
        let _ = writeln!(s, "### Stratum: {} (reference: {})\n", self.stratum.name(), self.reference);
        s.push_str("| Rank | Method | Partial | Available | Full | RMSE | MIS | AUPRC | Brier | CPU min (mean) | Failures |\n");
        s.push_str("|---:|---|---:|---:|---:|---:|---:|---:|---:|---:|---:|\n");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "| {} | {} | {} | {} | {} | {} | {} | {} | {} | {:.4} | {:.1}% |",
                r.rank,
                r.method,
                fmt(r.scores.partial),
                fmt(r.scores.available),
                fmt(r.scores.full),
                fmt(r.ratios[0]),
                fmt(r.ratios[1]),
                fmt(r.ratios[2]),
                fmt(r.ratios[3]),
                r.cpu_minutes_mean,
                100.0 * r.failure_proportion
            );
        }
        s
    }

    /// Heatmap with one row per method (in rank order) and columns for the
    /// composite scores, the metric ratios and the unstandardized extras.
    pub fn to_svg(&self) -> String {
        let cols = ["Partial", "Available", "Full", "RMSE", "MIS", "AUPRC", "Brier", "CPU min", "Fail %"];
        let (cw, ch, left, top) = (70.0, 22.0, 180.0, 40.0);
        let width = left + cw * cols.len() as f64 + 10.0;
        let height = top + ch * self.rows.len() as f64 + 10.0;
        let mut s = String::new();
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="sans-serif" font-size="11">"#
        );
        for (c, name) in cols.iter().enumerate() {
            let x = left + cw * (c as f64 + 0.5);
            let _ = writeln!(s, r#"<text x="{x}" y="{}" text-anchor="middle">{name}</text>"#, top - 10.0);
        }
        for (i, r) in self.rows.iter().enumerate() {
            let y = top + ch * i as f64;
            let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="end">{}</text>"#, left - 6.0, y + ch * 0.7, r.method);
            let vals = [
                r.scores.partial,
                r.scores.available,
                r.scores.full,
                r.ratios[0],
                r.ratios[1],
                r.ratios[2],
                r.ratios[3],
            ];
            for (c, v) in vals.iter().enumerate() {
                let x = left + cw * c as f64;
                let (fill, label) = match v {
                    Some(v) => (ratio_color(*v), format!("{v:.2}")),
                    None => ("#dddddd".to_string(), "-".to_string()),
                };
                let _ = writeln!(s, r#"<rect x="{x}" y="{y}" width="{cw}" height="{ch}" fill="{fill}" stroke="white"/>"#);
                let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{label}</text>"#, x + cw / 2.0, y + ch * 0.7);
            }
            for (c, label) in [
                format!("{:.3}", r.cpu_minutes_mean),
                format!("{:.1}", 100.0 * r.failure_proportion),
            ]
            .iter()
            .enumerate()
            {
                let x = left + cw * (7 + c) as f64;
                let _ = writeln!(s, r#"<rect x="{x}" y="{y}" width="{cw}" height="{ch}" fill="{GREY}" stroke="white"/>"#);
                let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{label}</text>"#, x + cw / 2.0, y + ch * 0.7);
            }
        }
        s.push_str("</svg>\n");
        s
    }
}

const GREY: &str = "#f4f4f4";

/// Diverging color on log2 ratio: blue below 1, red above, white at 1.
fn ratio_color(v: f64) -> String {
    let t = (v.max(RATIO_FLOOR).log2() / 2.0).clamp(-1.0, 1.0);
    let (r, g, b) = if t < 0.0 {
        let a = -t;
        (255.0 * (1.0 - a), 255.0 * (1.0 - 0.5 * a), 255.0)
    } else {
        (255.0, 255.0 * (1.0 - t), 255.0 * (1.0 - t))
    };
    format!("#{:02x}{:02x}{:02x}", r as u8, g as u8, b as u8)
}
