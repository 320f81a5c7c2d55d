//! Full-model p-value screening and greedy stepwise selection.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::glm::{fit_mle, FitResult, GlmError};

/// Upper 95% point of the chi-square distribution with one degree of freedom.
pub const CHI2_1_95: f64 = 3.841_458_820_694_124;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SelectionError {
    #[error("initial model fit failed: {0}")]
    InitialFit(GlmError),
    #[error("initial model fit did not converge")]
    InitialNotConverged,
    #[error("refit of the selected model failed: {0}")]
    Refit(GlmError),
    #[error("invalid stepwise configuration: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Forward,
    Backward,
    Both,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepwiseConfig {
    pub direction: Direction,
    /// Criterion cost per parameter: `-2 loglik + penalty * (k + 1)`.
    pub penalty_per_param: f64,
    pub max_steps: usize,
}

impl StepwiseConfig {
    pub fn new(direction: Direction, penalty_per_param: f64) -> Self {
        StepwiseConfig {
            direction,
            penalty_per_param,
            max_steps: 1000,
        }
    }

    pub fn validate(&self) -> Result<(), SelectionError> {
        if !(self.penalty_per_param >= 0.0) || !self.penalty_per_param.is_finite() {
            return Err(SelectionError::InvalidConfig(format!(
                "penalty per parameter must be non-negative, got {}",
                self.penalty_per_param
            )));
        }
        Ok(())
    }
}

/// A selected model with its refit, expanded to all `p` predictors.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectionFit {
    /// Selected predictor indices, ascending.
    pub selected: Vec<usize>,
    /// Refit on the selected predictors (intercept first).
    pub fit: FitResult,
    /// Length `p + 1`, intercept first, zeros where excluded.
    pub beta: Vec<f64>,
    /// 95% Wald bounds, `[0, 0]` where excluded.
    pub ci_lower: Vec<f64>,
    pub ci_upper: Vec<f64>,
    pub inclusion_score: Vec<f64>,
    /// Criterion after each accepted move, starting model first (stepwise only).
    pub criterion_path: Vec<f64>,
}

fn fit_subset(x: &DMatrix<f64>, y: &DVector<f64>, cols: &[usize]) -> Result<FitResult, GlmError> {
    let fit = fit_mle(&x.select_columns(cols), y, true)?;
    if !fit.converged {
        return Err(GlmError::NoConvergence(fit.iterations));
    }
    Ok(fit)
}

fn expand(p: usize, selected: &[usize], fit: &FitResult) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let (lo, hi) = fit.wald_intervals(0.95);
    let mut beta = vec![0.0; p + 1];
    let mut l = vec![0.0; p + 1];
    let mut u = vec![0.0; p + 1];
    beta[0] = fit.beta[0];
    l[0] = lo[0];
    u[0] = hi[0];
    for (k, &j) in selected.iter().enumerate() {
        beta[j + 1] = fit.beta[k + 1];
        l[j + 1] = lo[k + 1];
        u[j + 1] = hi[k + 1];
    }
    (beta, l, u)
}

/// Fits the full model, keeps predictors with Wald p below `threshold`, and
/// refits once. A threshold of 1 or more keeps every predictor.
pub fn pvalue_select(x: &DMatrix<f64>, y: &DVector<f64>, threshold: f64) -> Result<SelectionFit, SelectionError> {
    let p = x.ncols();
    let all: Vec<usize> = (0..p).collect();
    let full = fit_mle(&x.select_columns(&all), y, true).map_err(SelectionError::InitialFit)?;
    if !full.converged {
        return Err(SelectionError::InitialNotConverged);
    }
    let pvals = full.slope_pvalues();
    let inclusion_score: Vec<f64> = pvals.iter().map(|pv| 1.0 - pv).collect();
    let selected: Vec<usize> = if threshold >= 1.0 {
        all
    } else {
        (0..p).filter(|&j| pvals[j] < threshold).collect()
    };
    let fit = if selected.len() == p {
        full
    } else {
        fit_subset(x, y, &selected).map_err(SelectionError::Refit)?
    };
    let (beta, ci_lower, ci_upper) = expand(p, &selected, &fit);
    Ok(SelectionFit {
        selected,
        fit,
        beta,
        ci_lower,
        ci_upper,
        inclusion_score,
        criterion_path: Vec::new(),
    })
}

/// `-2 loglik + penalty * (number of parameters including the intercept)`.
pub fn criterion(fit: &FitResult, penalty_per_param: f64) -> f64 {
    -2.0 * fit.loglik + penalty_per_param * fit.beta.len() as f64
}

/// Greedy stepwise search on the information criterion.
///
/// Each step evaluates every admissible single addition and/or deletion and
/// takes the one with the lowest criterion if it improves on the current
/// model. Candidates whose fit fails are skipped.
pub fn stepwise_select(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    config: &StepwiseConfig,
) -> Result<SelectionFit, SelectionError> {
    config.validate()?;
    let p = x.ncols();
    let mut current: Vec<usize> = match config.direction {
        Direction::Forward => Vec::new(),
        Direction::Backward | Direction::Both => (0..p).collect(),
    };
    let mut fit = fit_subset(x, y, &current).map_err(|e| match e {
        GlmError::NoConvergence(_) => SelectionError::InitialNotConverged,
        other => SelectionError::InitialFit(other),
    })?;
    let mut crit = criterion(&fit, config.penalty_per_param);
    let mut path = vec![crit];
    let adds = matches!(config.direction, Direction::Forward | Direction::Both);
    let drops = matches!(config.direction, Direction::Backward | Direction::Both);

    for _ in 0..config.max_steps {
        let mut candidates: Vec<Vec<usize>> = Vec::new();
        if drops {
            for k in 0..current.len() {
                let mut c = current.clone();
                c.remove(k);
                candidates.push(c);
            }
        }
        if adds {
            for j in (0..p).filter(|j| !current.contains(j)) {
                let mut c = current.clone();
                c.push(j);
                c.sort_unstable();
                candidates.push(c);
            }
        }
        let mut best: Option<(f64, Vec<usize>, FitResult)> = None;
        for c in candidates {
            let Ok(f) = fit_subset(x, y, &c) else {
                continue;
            };
            let v = criterion(&f, config.penalty_per_param);
            if best.as_ref().is_none_or(|(bv, _, _)| v < *bv) {
                best = Some((v, c, f));
            }
        }
        match best {
            Some((v, c, f)) if v < crit - 1e-10 => {
                current = c;
                fit = f;
                crit = v;
                path.push(crit);
            }
            _ => break,
        }
    }

    let (beta, ci_lower, ci_upper) = expand(p, &current, &fit);
    let inclusion_score = (0..p).map(|j| if current.contains(&j) { 1.0 } else { 0.0 }).collect();
    Ok(SelectionFit {
        selected: current,
        fit,
        beta,
        ci_lower,
        ci_upper,
        inclusion_score,
        criterion_path: path,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Bernoulli, Distribution, Normal};

    fn simulate(n: usize, beta: &[f64], seed: u64) -> (DMatrix<f64>, DVector<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = beta.len() - 1;
        let normal = Normal::new(0.0, 1.0).unwrap();
        let x = DMatrix::from_fn(n, p, |_, _| normal.sample(&mut rng));
        let y = DVector::from_fn(n, |i, _| {
            let eta = beta[0] + (0..p).map(|j| beta[j + 1] * x[(i, j)]).sum::<f64>();
            let pr = 1.0 / (1.0 + (-eta).exp());
            Bernoulli::new(pr).unwrap().sample(&mut rng) as u8 as f64
        });
        (x, y)
    }

    #[test]
    fn threshold_one_is_the_full_model() {
        let (x, y) = simulate(150, &[0.0, 1.0, 0.0, -0.4], 1);
        let sel = pvalue_select(&x, &y, 1.0).unwrap();
        let full = fit_mle(&x, &y, true).unwrap();
        assert_eq!(sel.selected, vec![0, 1, 2]);
        assert_eq!(sel.beta, full.beta);
    }

    #[test]
    fn separated_data_fail_pvalue_selection() {
        let x = DMatrix::from_column_slice(6, 1, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let y = DVector::from_vec(vec![0.0, 0.0, 0.0, 1.0, 1.0, 1.0]);
        assert!(pvalue_select(&x, &y, 0.05).is_err());
        let cfg = StepwiseConfig::new(Direction::Backward, 2.0);
        assert!(stepwise_select(&x, &y, &cfg).is_err());
    }

    #[test]
    fn criterion_never_increases_along_path() {
        let (x, y) = simulate(200, &[0.2, 0.9, 0.0, 0.5, 0.0, -0.7], 2);
        for dir in [Direction::Forward, Direction::Backward, Direction::Both] {
            let sel = stepwise_select(&x, &y, &StepwiseConfig::new(dir, 2.0)).unwrap();
            assert!(sel.criterion_path.windows(2).all(|w| w[1] <= w[0]));
            for j in 0..5 {
                assert_eq!(sel.inclusion_score[j] == 1.0, sel.beta[j + 1] != 0.0);
            }
        }
    }

    #[test]
    fn zero_penalty_backward_keeps_everything() {
        let (x, y) = simulate(120, &[0.0, 0.5, 0.0, 0.0], 3);
        let sel = stepwise_select(&x, &y, &StepwiseConfig::new(Direction::Backward, 0.0)).unwrap();
        assert_eq!(sel.selected, vec![0, 1, 2]);
    }

    #[test]
    fn excluded_coordinates_get_degenerate_intervals() {
        let (x, y) = simulate(300, &[0.0, 1.2, 0.0], 4);
        let sel = pvalue_select(&x, &y, 0.005).unwrap();
        for j in 0..2 {
            if !sel.selected.contains(&j) {
                assert_eq!((sel.ci_lower[j + 1], sel.ci_upper[j + 1]), (0.0, 0.0));
            } else {
                assert!(sel.ci_lower[j + 1] < sel.ci_upper[j + 1]);
            }
        }
    }
}
