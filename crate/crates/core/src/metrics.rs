//! Estimation, selection and prediction metrics for one fitted method.

use serde::{Deserialize, Serialize};

/// Interval level used for the interval score.
pub const DEFAULT_ALPHA: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MetricError {
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("empty input")]
    Empty,
    #[error("interval lower bound exceeds upper bound at coordinate {0}")]
    InvertedInterval(usize),
    #[error("AUPRC needs at least one relevant and one irrelevant predictor")]
    Undefined,
}

/// What a method produces on one replicate.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MethodOutput {
    /// Length `p + 1`, intercept first, zeros for excluded predictors.
    pub beta_hat: Vec<f64>,
    pub ci_lower: Option<Vec<f64>>,
    pub ci_upper: Option<Vec<f64>>,
    /// Length `p`; larger means more likely relevant.
    pub inclusion_score: Vec<f64>,
    /// Held-out predicted probabilities, one vector per evaluation fold.
    pub test_probs: Vec<Vec<f64>>,
    pub cpu_seconds: f64,
    pub failed: bool,
}

impl MethodOutput {
    pub fn failure(cpu_seconds: f64) -> Self {
        MethodOutput {
            cpu_seconds,
            failed: true,
            ..Default::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub rmse: Option<f64>,
    pub mis: Option<f64>,
    pub auprc: Option<f64>,
    pub brier: Option<f64>,
    /// Kept out of serialized records so archives are reproducible; the
    /// harness stores timings separately.
    #[serde(skip_serializing, default)]
    pub cpu_minutes: f64,
    pub failed: bool,
}

fn same_len(a: usize, b: usize) -> Result<(), MetricError> {
    if a != b {
        return Err(MetricError::LengthMismatch(a, b));
    }
    if a == 0 {
        return Err(MetricError::Empty);
    }
    Ok(())
}

/// Root mean squared error over slope coordinates.
pub fn rmse(beta_hat: &[f64], beta_true: &[f64]) -> Result<f64, MetricError> {
    same_len(beta_hat.len(), beta_true.len())?;
    let ss: f64 = beta_hat.iter().zip(beta_true).map(|(a, b)| (a - b).powi(2)).sum();
    Ok((ss / beta_hat.len() as f64).sqrt())
}

/// Interval score of `[l, u]` for the value `b`:
/// `(u - l) + 2/alpha * (l - b)_+ + 2/alpha * (b - u)_+`.
pub fn interval_score(l: f64, u: f64, b: f64, alpha: f64) -> f64 {
    let pen = 2.0 / alpha;
    (u - l) + pen * (l - b).max(0.0) + pen * (b - u).max(0.0)
}

/// Mean interval score over coordinates.
pub fn mean_interval_score(lower: &[f64], upper: &[f64], beta_true: &[f64], alpha: f64) -> Result<f64, MetricError> {
    same_len(lower.len(), upper.len())?;
    same_len(lower.len(), beta_true.len())?;
    let mut total = 0.0;
    for j in 0..lower.len() {
        if lower[j] > upper[j] {
            return Err(MetricError::InvertedInterval(j));
        }
        total += interval_score(lower[j], upper[j], beta_true[j], alpha);
    }
    Ok(total / lower.len() as f64)
}

/// Area under the precision-recall curve in average-precision form.
///
/// Predictors are visited in descending score; tied scores form one block
/// that enters the curve at once. Each block adds its recall gain times the
/// precision reached after it.
pub fn auprc(scores: &[f64], relevant: &[bool]) -> Result<f64, MetricError> {
    same_len(scores.len(), relevant.len())?;
    let k = relevant.iter().filter(|&&r| r).count();
    if k == 0 || k == relevant.len() {
        return Err(MetricError::Undefined);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let (mut tp, mut seen, mut area) = (0usize, 0usize, 0.0);
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        let mut block_tp = 0;
        while i < order.len() && scores[order[i]] == s {
            block_tp += relevant[order[i]] as usize;
            seen += 1;
            i += 1;
        }
        tp += block_tp;
        if block_tp > 0 {
            area += (block_tp as f64 / k as f64) * (tp as f64 / seen as f64);
        }
    }
    Ok(area)
}

/// Mean squared difference between predicted probabilities and outcomes.
pub fn brier(probs: &[f64], outcomes: &[f64]) -> Result<f64, MetricError> {
    same_len(probs.len(), outcomes.len())?;
    let ss: f64 = probs.iter().zip(outcomes).map(|(p, o)| (p - o).powi(2)).sum();
    Ok(ss / probs.len() as f64)
}

/// All metrics for one method on one replicate.
///
/// `beta_true` is intercept-first like `out.beta_hat`; `test_outcomes`
/// follows the fold layout of `out.test_probs`.
pub fn compute_metrics(out: &MethodOutput, beta_true: &[f64], test_outcomes: &[Vec<f64>], alpha: f64) -> MetricRecord {
    let cpu_minutes = out.cpu_seconds / 60.0;
    if out.failed {
        return MetricRecord {
            rmse: None,
            mis: None,
            auprc: None,
            brier: None,
            cpu_minutes,
            failed: true,
        };
    }
    let truth = &beta_true[1.min(beta_true.len())..];
    let slopes = &out.beta_hat[1.min(out.beta_hat.len())..];
    let rmse_v = rmse(slopes, truth).ok();
    let mis = match (&out.ci_lower, &out.ci_upper) {
        (Some(l), Some(u)) if l.len() == out.beta_hat.len() && u.len() == out.beta_hat.len() => {
            mean_interval_score(&l[1..], &u[1..], truth, alpha).ok()
        }
        _ => None,
    };
    let relevant: Vec<bool> = truth.iter().map(|&b| b != 0.0).collect();
    let au = auprc(&out.inclusion_score, &relevant).ok();
    let probs: Vec<f64> = out.test_probs.iter().flatten().copied().collect();
    let outcomes: Vec<f64> = test_outcomes.iter().flatten().copied().collect();
    MetricRecord {
        rmse: rmse_v,
        mis,
        auprc: au,
        brier: brier(&probs, &outcomes).ok(),
        cpu_minutes,
        failed: false,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rmse_examples() {
        assert_eq!(rmse(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert!((rmse(&[3.0, 4.0], &[0.0, 0.0]).unwrap() - 12.5f64.sqrt()).abs() < 1e-15);
        assert_eq!(rmse(&[1.0], &[1.0, 2.0]), Err(MetricError::LengthMismatch(1, 2)));
    }

    #[test]
    fn interval_score_cases() {
        assert_eq!(interval_score(-1.0, 1.0, 0.3, 0.05), 2.0);
        assert_eq!(interval_score(-1.0, 1.0, 2.0, 0.05), 42.0);
        assert_eq!(interval_score(-1.0, 1.0, -3.0, 0.05), 82.0);
        assert!(mean_interval_score(&[1.0], &[0.0], &[0.0], 0.05).is_err());
    }

    #[test]
    fn auprc_examples() {
        let rel = [true, true, false, false];
        assert_eq!(auprc(&[4.0, 3.0, 2.0, 1.0], &rel).unwrap(), 1.0);
        assert_eq!(auprc(&[1.0; 4], &rel).unwrap(), 0.5);
        let rel1 = [true, false, false, false];
        assert_eq!(auprc(&[1.0, 2.0, 3.0, 4.0], &rel1).unwrap(), 0.25);
        assert_eq!(auprc(&[1.0, 2.0], &[true, true]), Err(MetricError::Undefined));
    }

    #[test]
    fn brier_examples() {
        assert_eq!(brier(&[1.0, 0.0], &[1.0, 0.0]).unwrap(), 0.0);
        assert_eq!(brier(&[0.5; 3], &[1.0, 0.0, 1.0]).unwrap(), 0.25);
        assert!((brier(&[0.8, 0.3], &[1.0, 0.0]).unwrap() - 0.065).abs() < 1e-15);
        assert_eq!(brier(&[], &[]), Err(MetricError::Empty));
    }

    #[test]
    fn failed_output_has_no_metrics() {
        let rec = compute_metrics(&MethodOutput::failure(6.0), &[0.0, 1.0], &[], 0.05);
        assert!(rec.failed);
        assert_eq!(rec.rmse, None);
        assert_eq!(rec.cpu_minutes, 0.1);
    }
}
