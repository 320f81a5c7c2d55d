//! Tabular ingestion and predictor processing.
//!
//! A CSV file is read into a [`RawTable`] (typed columns plus a binary
//! outcome), then [`process_predictors`] turns it into a [`Dataset`]:
//! categorical columns become treatment-coded dummies against their most
//! frequent level, continuous columns are standardized, and degenerate
//! columns are dropped.

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Columns whose variance falls below this are removed.
pub const MIN_VARIANCE: f64 = 1e-20;

#[derive(Debug, thiserror::Error)]
pub enum IngestError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("outcome column `{0}` not found")]
    MissingOutcome(String),
    #[error("outcome column `{column}` is not binary ({distinct} distinct values)")]
    OutcomeNotBinary { column: String, distinct: usize },
    #[error("non-numeric value `{value}` in numeric column `{column}` (row {row})")]
    NonNumericCell {
        column: String,
        row: usize,
        value: String,
    },
    #[error("duplicate column name `{0}`")]
    DuplicateColumn(String),
    #[error("no predictors left after processing")]
    DegenerateDesign,
    #[error("too few rows: {0} (need at least 4)")]
    TooFewRows(usize),
    #[error("invalid fold request: {0}")]
    InvalidFolds(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColumnKind {
    Numeric,
    Categorical,
    /// Already dummy-coded 0/1 column; kept unscaled by processing.
    Indicator,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ColumnValues {
    Numeric(Vec<f64>),
    Categorical(Vec<String>),
    Indicator(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RawColumn {
    pub name: String,
    pub values: ColumnValues,
}

impl RawColumn {
    pub fn kind(&self) -> ColumnKind {
        match self.values {
            ColumnValues::Numeric(_) => ColumnKind::Numeric,
            ColumnValues::Categorical(_) => ColumnKind::Categorical,
            ColumnValues::Indicator(_) => ColumnKind::Indicator,
        }
    }

    fn len(&self) -> usize {
        match &self.values {
            ColumnValues::Numeric(v) | ColumnValues::Indicator(v) => v.len(),
            ColumnValues::Categorical(v) => v.len(),
        }
    }
}

/// Typed predictor columns and a 0/1 outcome, before any transformation.
#[derive(Debug, Clone, PartialEq)]
pub struct RawTable {
    pub predictors: Vec<RawColumn>,
    pub outcome_name: String,
    pub outcome: Vec<f64>,
}

impl RawTable {
    pub fn n_rows(&self) -> usize {
        self.outcome.len()
    }

    pub fn n_predictors(&self) -> usize {
        self.predictors.len()
    }
}

/// Overrides for column-kind inference.
#[derive(Debug, Clone, Default)]
pub struct LoadOptions {
    /// Columns forced to be categorical even when every cell parses as a number.
    pub categorical: Vec<String>,
    /// Columns that must be numeric; a non-numeric cell is an error.
    pub numeric: Vec<String>,
}

fn is_missing(cell: &str) -> bool {
    matches!(cell, "" | "NA" | "na" | "NaN" | "nan" | "." | "?")
}

pub fn load_dataset(path: impl AsRef<Path>, outcome: &str) -> Result<RawTable, IngestError> {
    load_dataset_with(path, outcome, &LoadOptions::default())
}

pub fn load_dataset_with(
    path: impl AsRef<Path>,
    outcome: &str,
    opts: &LoadOptions,
) -> Result<RawTable, IngestError> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|source| IngestError::Io {
        path: path.display().to_string(),
        source,
    })?;
    read_csv(file, outcome, opts)
}

/// Parses CSV text from any reader. Rows containing a missing cell are dropped.
pub fn read_csv<R: std::io::Read>(
    reader: R,
    outcome: &str,
    opts: &LoadOptions,
) -> Result<RawTable, IngestError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    let mut seen = std::collections::HashSet::new();
    for name in &header {
        if !seen.insert(name.as_str()) {
            return Err(IngestError::DuplicateColumn(name.clone()));
        }
    }
    let outcome_idx = header
        .iter()
        .position(|h| h == outcome)
        .ok_or_else(|| IngestError::MissingOutcome(outcome.to_string()))?;

    let mut rows: Vec<Vec<String>> = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let cells: Vec<String> = rec.iter().map(str::to_string).collect();
        if cells.iter().any(|c| is_missing(c)) {
            continue;
        }
        rows.push(cells);
    }

    let outcome_cells: Vec<&str> = rows.iter().map(|r| r[outcome_idx].as_str()).collect();
    let outcome_values = code_outcome(outcome, &outcome_cells)?;

    let mut predictors = Vec::with_capacity(header.len() - 1);
    for (j, name) in header.iter().enumerate() {
        if j == outcome_idx {
            continue;
        }
        let cells: Vec<&str> = rows.iter().map(|r| r[j].as_str()).collect();
        let forced_cat = opts.categorical.iter().any(|c| c == name);
        let forced_num = opts.numeric.iter().any(|c| c == name);
        let parsed: Vec<Option<f64>> = cells.iter().map(|c| c.parse::<f64>().ok()).collect();
        let values = if forced_cat {
            ColumnValues::Categorical(cells.iter().map(|c| c.to_string()).collect())
        } else if let Some(bad) = parsed.iter().position(Option::is_none) {
            if forced_num {
                return Err(IngestError::NonNumericCell {
                    column: name.clone(),
                    row: bad + 1,
                    value: cells[bad].to_string(),
                });
            }
            ColumnValues::Categorical(cells.iter().map(|c| c.to_string()).collect())
        } else {
            ColumnValues::Numeric(parsed.into_iter().map(Option::unwrap).collect())
        };
        predictors.push(RawColumn {
            name: name.clone(),
            values,
        });
    }

    Ok(RawTable {
        predictors,
        outcome_name: outcome.to_string(),
        outcome: outcome_values,
    })
}

/// Maps a two-valued column onto {0,1}. Numeric labels order numerically,
/// anything else lexicographically; the smaller label becomes 0.
fn code_outcome(column: &str, cells: &[&str]) -> Result<Vec<f64>, IngestError> {
    let mut distinct: Vec<&str> = cells.to_vec();
    distinct.sort_unstable();
    distinct.dedup();
    if distinct.len() != 2 {
        return Err(IngestError::OutcomeNotBinary {
            column: column.to_string(),
            distinct: distinct.len(),
        });
    }
    let numeric: Option<Vec<f64>> = distinct.iter().map(|c| c.parse::<f64>().ok()).collect();
    let zero_label = match numeric {
        Some(v) if v[0] == v[1] => {
            return Err(IngestError::OutcomeNotBinary {
                column: column.to_string(),
                distinct: 1,
            })
        }
        Some(v) if v[1] < v[0] => distinct[1],
        _ => distinct[0],
    };
    Ok(cells
        .iter()
        .map(|c| if *c == zero_label { 0.0 } else { 1.0 })
        .collect())
}

/// Where a processed column came from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum ColumnOrigin {
    Continuous,
    Dummy { factor: String, level: String },
}

/// Standardized design matrix with binary outcome.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub x: DMatrix<f64>,
    pub y: DVector<f64>,
    pub names: Vec<String>,
    pub origins: Vec<ColumnOrigin>,
}

impl Dataset {
    /// Wraps an already-processed design. All columns are tagged continuous.
    pub fn from_parts(x: DMatrix<f64>, y: DVector<f64>) -> Self {
        assert_eq!(x.nrows(), y.len(), "design/outcome row mismatch");
        let names = (1..=x.ncols()).map(|j| format!("x{j}")).collect();
        let origins = vec![ColumnOrigin::Continuous; x.ncols()];
        Dataset {
            x,
            y,
            names,
            origins,
        }
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    /// Same predictors, different outcome vector.
    pub fn with_outcome(&self, y: DVector<f64>) -> Self {
        assert_eq!(y.len(), self.n());
        Dataset {
            x: self.x.clone(),
            y,
            names: self.names.clone(),
            origins: self.origins.clone(),
        }
    }

    pub fn subset_rows(&self, rows: &[usize]) -> Self {
        Dataset {
            x: self.x.select_rows(rows),
            y: DVector::from_iterator(rows.len(), rows.iter().map(|&i| self.y[i])),
            names: self.names.clone(),
            origins: self.origins.clone(),
        }
    }

    pub fn select_columns(&self, cols: &[usize]) -> Self {
        Dataset {
            x: self.x.select_columns(cols),
            y: self.y.clone(),
            names: cols.iter().map(|&j| self.names[j].clone()).collect(),
            origins: cols.iter().map(|&j| self.origins[j].clone()).collect(),
        }
    }

    pub fn n_cases(&self) -> usize {
        self.y.iter().filter(|&&v| v > 0.5).count()
    }

    /// Converts back to raw form; dummies become indicator columns.
    pub fn to_raw(&self) -> RawTable {
        let predictors = (0..self.p())
            .map(|j| {
                let col: Vec<f64> = self.x.column(j).iter().copied().collect();
                let values = match self.origins[j] {
                    ColumnOrigin::Continuous => ColumnValues::Numeric(col),
                    ColumnOrigin::Dummy { .. } => ColumnValues::Indicator(col),
                };
                RawColumn {
                    name: self.names[j].clone(),
                    values,
                }
            })
            .collect();
        RawTable {
            predictors,
            outcome_name: "y".to_string(),
            outcome: self.y.iter().copied().collect(),
        }
    }
}

fn mean_and_variance(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var)
}

pub fn process_predictors(raw: &RawTable) -> Result<Dataset, IngestError> {
    let n = raw.n_rows();
    if n < 4 {
        return Err(IngestError::TooFewRows(n));
    }
    let mut columns: Vec<Vec<f64>> = Vec::new();
    let mut names = Vec::new();
    let mut origins = Vec::new();

    for col in &raw.predictors {
        debug_assert_eq!(col.len(), n);
        match &col.values {
            ColumnValues::Numeric(v) => {
                let (mean, var) = mean_and_variance(v);
                if !(var >= MIN_VARIANCE) {
                    log::debug!("dropping near-constant column {}", col.name);
                    continue;
                }
                let sd = var.sqrt();
                columns.push(v.iter().map(|x| (x - mean) / sd).collect());
                names.push(col.name.clone());
                origins.push(ColumnOrigin::Continuous);
            }
            ColumnValues::Indicator(v) => {
                let (_, var) = mean_and_variance(v);
                if !(var >= MIN_VARIANCE) {
                    continue;
                }
                columns.push(v.clone());
                names.push(col.name.clone());
                origins.push(match col.name.split_once('=') {
                    Some((f, l)) => ColumnOrigin::Dummy {
                        factor: f.to_string(),
                        level: l.to_string(),
                    },
                    None => ColumnOrigin::Dummy {
                        factor: col.name.clone(),
                        level: "1".to_string(),
                    },
                });
            }
            ColumnValues::Categorical(v) => {
                let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
                for level in v {
                    *counts.entry(level.as_str()).or_default() += 1;
                }
                if counts.len() < 2 {
                    continue;
                }
                // count ties go to the lexicographically smallest level
                let reference = counts
                    .iter()
                    .max_by(|a, b| a.1.cmp(b.1).then_with(|| b.0.cmp(a.0)))
                    .map(|(k, _)| *k)
                    .expect("non-empty");
                for level in counts.keys().filter(|l| **l != reference) {
                    columns.push(
                        v.iter()
                            .map(|x| if x == level { 1.0 } else { 0.0 })
                            .collect(),
                    );
                    names.push(format!("{}={}", col.name, level));
                    origins.push(ColumnOrigin::Dummy {
                        factor: col.name.clone(),
                        level: level.to_string(),
                    });
                }
            }
        }
    }

    if columns.is_empty() {
        return Err(IngestError::DegenerateDesign);
    }
    let p = columns.len();
    let x = DMatrix::from_fn(n, p, |i, j| columns[j][i]);
    Ok(Dataset {
        x,
        y: DVector::from_vec(raw.outcome.clone()),
        names,
        origins,
    })
}

/// Stratified fold labels in `0..k`.
///
/// Each class is shuffled independently and dealt round-robin, continuing
/// the fold counter across classes so overall fold sizes differ by at most one.
/// With `strict`, a class with fewer than `k` members is an error.
pub fn make_folds(y: &[f64], k: usize, seed: u64, strict: bool) -> Result<Vec<usize>, IngestError> {
    let n = y.len();
    if k < 2 {
        return Err(IngestError::InvalidFolds(format!("k = {k} < 2")));
    }
    if n < 2 * k {
        return Err(IngestError::InvalidFolds(format!("n = {n} < 2k = {}", 2 * k)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut labels = vec![0usize; n];
    let mut next = 0usize;
    for class in [0.0, 1.0] {
        let mut members: Vec<usize> = (0..n).filter(|&i| (y[i] > 0.5) == (class > 0.5)).collect();
        if strict && members.len() < k {
            return Err(IngestError::InvalidFolds(format!(
                "class {class} has {} members, fewer than k = {k}",
                members.len()
            )));
        }
        members.shuffle(&mut rng);
        for i in members {
            labels[i] = next % k;
            next += 1;
        }
    }
    Ok(labels)
}

/// Row indices of `(train, test)` for fold `fold`.
pub fn fold_split(labels: &[usize], fold: usize) -> (Vec<usize>, Vec<usize>) {
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (i, &l) in labels.iter().enumerate() {
        if l == fold {
            test.push(i);
        } else {
            train.push(i);
        }
    }
    (train, test)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table(csv: &str, outcome: &str) -> Result<RawTable, IngestError> {
        read_csv(csv.as_bytes(), outcome, &LoadOptions::default())
    }

    #[test]
    fn parses_small_csv() {
        let raw = table("x1,x2,y\n1,2,0\n2,3,1\n3,1,0\n4,5,1\n", "y").unwrap();
        assert_eq!(raw.n_rows(), 4);
        assert_eq!(raw.n_predictors(), 2);
        assert_eq!(raw.outcome, vec![0.0, 1.0, 0.0, 1.0]);
    }

    #[test]
    fn rejects_three_valued_outcome() {
        let err = table("x,y\n1,0\n2,1\n3,2\n4,1\n", "y").unwrap_err();
        assert!(matches!(err, IngestError::OutcomeNotBinary { distinct: 3, .. }));
    }

    #[test]
    fn rejects_missing_outcome_column() {
        let err = table("x,z\n1,0\n2,1\n", "y").unwrap_err();
        assert!(matches!(err, IngestError::MissingOutcome(_)));
    }

    #[test]
    fn string_outcome_is_coded_lexicographically() {
        let raw = table("x,y\n1,yes\n2,no\n3,no\n4,yes\n", "y").unwrap();
        assert_eq!(raw.outcome, vec![1.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn forced_numeric_column_rejects_text() {
        let opts = LoadOptions {
            numeric: vec!["x".into()],
            ..Default::default()
        };
        let err = read_csv("x,y\n1,0\nabc,1\n".as_bytes(), "y", &opts).unwrap_err();
        assert!(matches!(err, IngestError::NonNumericCell { row: 2, .. }));
    }

    #[test]
    fn rows_with_missing_cells_are_dropped() {
        let raw = table("x,y\n1,0\nNA,1\n3,1\n4,0\n5,1\n", "y").unwrap();
        assert_eq!(raw.n_rows(), 4);
    }

    #[test]
    fn factor_reference_is_most_frequent_level() {
        // frequencies a:5, b:3, c:2
        let mut csv = String::from("f,z,y\n");
        let levels = ["a", "a", "a", "a", "a", "b", "b", "b", "c", "c"];
        for (i, l) in levels.iter().enumerate() {
            csv.push_str(&format!("{l},{i},{}\n", i % 2));
        }
        let ds = process_predictors(&table(&csv, "y").unwrap()).unwrap();
        assert_eq!(ds.names, vec!["f=b", "f=c", "z"]);
        let row_sums: Vec<f64> = (0..ds.n()).map(|i| ds.x[(i, 0)] + ds.x[(i, 1)]).collect();
        assert!(row_sums.iter().all(|&s| s <= 1.0));
        assert_eq!(ds.x.column(0).sum(), 3.0);
    }

    #[test]
    fn reference_ties_break_lexicographically() {
        let csv = "f,y\nq,0\nq,1\np,0\np,1\nr,1\n";
        let ds = process_predictors(&table(csv, "y").unwrap()).unwrap();
        assert_eq!(ds.names, vec!["f=q", "f=r"]);
    }

    #[test]
    fn constant_and_single_level_columns_are_dropped() {
        let csv = "c,f,x,y\n5,a,1,0\n5,a,2,1\n5,a,3,0\n5,a,4,1\n";
        let ds = process_predictors(&table(csv, "y").unwrap()).unwrap();
        assert_eq!(ds.names, vec!["x"]);
    }

    #[test]
    fn all_degenerate_is_an_error() {
        let csv = "c,y\n5,0\n5,1\n5,0\n5,1\n";
        assert!(matches!(
            process_predictors(&table(csv, "y").unwrap()),
            Err(IngestError::DegenerateDesign)
        ));
    }

    #[test]
    fn folds_are_stratified_and_deterministic() {
        let y: Vec<f64> = (0..10).map(|i| (i % 2) as f64).collect();
        let a = make_folds(&y, 5, 7, true).unwrap();
        assert_eq!(a, make_folds(&y, 5, 7, true).unwrap());
        for f in 0..5 {
            let (_, test) = fold_split(&a, f);
            assert_eq!(test.len(), 2);
            let ones: f64 = test.iter().map(|&i| y[i]).sum();
            assert_eq!(ones, 1.0);
        }
    }

    #[test]
    fn strict_folds_reject_rare_class() {
        let y = vec![0., 0., 0., 0., 0., 0., 0., 0., 1., 1.];
        assert!(make_folds(&y, 5, 1, true).is_err());
        assert!(make_folds(&y, 5, 1, false).is_ok());
        assert!(make_folds(&y[..5], 3, 1, false).is_err());
    }
}
