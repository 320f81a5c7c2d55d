//! Complete and quasi-complete separation detection.
//!
//! With signed rows `a_i = (2 y_i - 1) x_i` (intercept column included),
//! the data are separated iff some direction `b` has `a_i . b >= 0` for every
//! row and `> 0` for at least one. We solve
//!
//! ```text
//! maximize  sum_i a_i . b   s.t.  a_i . b >= 0,  -1 <= b_j <= 1
//! ```
//!
//! A positive optimum certifies separation. A second LP maximizing the
//! smallest margin decides between complete and quasi-complete.

use microlp::{ComparisonOp, OptimizationDirection, Problem};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::glm::with_intercept;

/// Optimum above this counts as separated; margins above it count as strict.
pub const SEPARATION_TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SeparationError {
    #[error("separation LP could not be solved: {0}")]
    Indeterminate(String),
    #[error("outcome has a single class")]
    SingleClass,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeparationKind {
    Complete,
    QuasiComplete,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeparationReport {
    pub separated: bool,
    pub kind: Option<SeparationKind>,
    /// Separating direction, intercept first; present iff `separated`.
    pub certificate: Option<Vec<f64>>,
}

impl SeparationReport {
    fn none() -> Self {
        SeparationReport {
            separated: false,
            kind: None,
            certificate: None,
        }
    }
}

fn signed_rows(design: &DMatrix<f64>, y: &DVector<f64>) -> DMatrix<f64> {
    let mut a = design.clone();
    for i in 0..a.nrows() {
        if y[i] < 0.5 {
            a.row_mut(i).neg_mut();
        }
    }
    a
}

fn lp_error(e: impl std::fmt::Display) -> SeparationError {
    SeparationError::Indeterminate(e.to_string())
}

/// Maximizes the total signed margin; returns (optimum, direction).
fn total_margin_lp(a: &DMatrix<f64>) -> Result<(f64, Vec<f64>), SeparationError> {
    let q = a.ncols();
    let mut pb = Problem::new(OptimizationDirection::Maximize);
    let obj: Vec<f64> = (0..q).map(|j| a.column(j).sum()).collect();
    let vars: Vec<_> = obj.iter().map(|&c| pb.add_var(c, (-1.0, 1.0))).collect();
    for i in 0..a.nrows() {
        let terms: Vec<_> = (0..q)
            .filter(|&j| a[(i, j)] != 0.0)
            .map(|j| (vars[j], a[(i, j)]))
            .collect();
        if terms.is_empty() {
            continue;
        }
        pb.add_constraint(terms.as_slice(), ComparisonOp::Ge, 0.0);
    }
    let outcome = pb.solve().map_err(lp_error)?;
    let sol = outcome
        .solution()
        .ok_or_else(|| SeparationError::Indeterminate("no solution returned".into()))?;
    let b: Vec<f64> = vars.iter().map(|&v| sol.var_value(v)).collect();
    Ok((sol.objective(), b))
}

/// Maximizes the smallest signed margin (capped at 1); returns (margin, direction).
fn min_margin_lp(a: &DMatrix<f64>) -> Result<(f64, Vec<f64>), SeparationError> {
    let q = a.ncols();
    let mut pb = Problem::new(OptimizationDirection::Maximize);
    let vars: Vec<_> = (0..q).map(|_| pb.add_var(0.0, (-1.0, 1.0))).collect();
    let t = pb.add_var(1.0, (0.0, 1.0));
    for i in 0..a.nrows() {
        let mut terms: Vec<_> = (0..q)
            .filter(|&j| a[(i, j)] != 0.0)
            .map(|j| (vars[j], a[(i, j)]))
            .collect();
        terms.push((t, -1.0));
        pb.add_constraint(terms.as_slice(), ComparisonOp::Ge, 0.0);
    }
    let outcome = pb.solve().map_err(lp_error)?;
    let sol = outcome
        .solution()
        .ok_or_else(|| SeparationError::Indeterminate("no solution returned".into()))?;
    let b: Vec<f64> = vars.iter().map(|&v| sol.var_value(v)).collect();
    Ok((sol.var_value(t), b))
}

/// Separation check on predictors `x` (no intercept column) with an intercept added.
pub fn detect_separation(x: &DMatrix<f64>, y: &DVector<f64>) -> Result<SeparationReport, SeparationError> {
    detect_separation_design(&with_intercept(x), y)
}

/// Separation check on a design taken as-is.
pub fn detect_separation_design(
    design: &DMatrix<f64>,
    y: &DVector<f64>,
) -> Result<SeparationReport, SeparationError> {
    let ones = y.iter().filter(|&&v| v > 0.5).count();
    if ones == 0 || ones == y.len() {
        return Err(SeparationError::SingleClass);
    }
    let a = signed_rows(design, y);
    let (opt, b) = total_margin_lp(&a)?;
    if !opt.is_finite() {
        return Err(SeparationError::Indeterminate(format!("objective {opt}")));
    }
    if opt <= SEPARATION_TOL {
        return Ok(SeparationReport::none());
    }
    let (margin, b_strict) = min_margin_lp(&a)?;
    let (kind, cert) = if margin > SEPARATION_TOL {
        (SeparationKind::Complete, b_strict)
    } else {
        (SeparationKind::QuasiComplete, b)
    };
    Ok(SeparationReport {
        separated: true,
        kind: Some(kind),
        certificate: Some(cert),
    })
}

/// Coefficient-magnitude check: true iff any entry is non-finite or exceeds
/// `threshold` in absolute value.
pub fn unstable_coefficients(beta: &[f64], threshold: f64) -> bool {
    beta.iter().any(|b| !b.is_finite() || b.abs() > threshold)
}
