//! Data-generating models built from an empirical design, and outcome
//! replicates simulated from them.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::glm::{fit_mle, loglik, null_loglik, prob, with_intercept, GlmError};
use crate::ingest::Dataset;
use crate::penalized::{fit_penalized, PenaltySpec, Standardizer};
use crate::selection::{stepwise_select, Direction, StepwiseConfig, CHI2_1_95};

/// Screening applies from this many predictors on.
pub const SCREEN_MIN_P: usize = 30;
/// Predictors kept after correlation screening.
pub const CORRELATION_KEEP: usize = 80;
/// Predictors kept after pseudo-R² screening.
pub const SCREEN_KEEP: usize = 30;
/// Linear predictor bound applied before the logistic transform.
pub const ETA_CLIP: f64 = 10.0;
/// Largest slope magnitude accepted without ridge stabilization.
pub const MAX_ABS_BETA: f64 = 10.0;
pub const RIDGE_GRID_LEN: usize = 25;
pub const RIDGE_GRID_MIN: f64 = 1e-4;
pub const RIDGE_GRID_MAX: f64 = 1e2;
pub const DEFAULT_REPLICATES: usize = 100;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DgpError {
    #[error("no predictor survived selection")]
    EmptyModelSelected,
    #[error("no predictors to screen")]
    NoPredictors,
    #[error("generating model fit failed: {0}")]
    Fit(String),
}

/// Coefficients and success probabilities of a data-generating model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratingModel {
    /// Selected predictor indices into the processed dataset, ascending.
    pub selected: Vec<usize>,
    pub names: Vec<String>,
    /// Length `p + 1`, intercept first, zeros outside `selected`.
    pub beta_dgm: Vec<f64>,
    pub pi: Vec<f64>,
    pub pseudo_r2: f64,
    pub separation_handled: bool,
}

impl GeneratingModel {
    pub fn slopes(&self) -> &[f64] {
        &self.beta_dgm[1..]
    }

    pub fn relevant(&self) -> Vec<usize> {
        (0..self.beta_dgm.len() - 1)
            .filter(|&j| self.beta_dgm[j + 1] != 0.0)
            .collect()
    }
}

fn correlation(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma).powi(2);
        sbb += (y - mb).powi(2);
    }
    if saa == 0.0 || sbb == 0.0 {
        return 0.0;
    }
    sab / (saa * sbb).sqrt()
}

/// McFadden pseudo-R² `1 - loglik / loglik_null`.
pub fn mcfadden_r2(ll: f64, ll_null: f64) -> f64 {
    if ll_null == 0.0 {
        return 0.0;
    }
    1.0 - ll / ll_null
}

/// Univariate McFadden pseudo-R². A predictor that separates the outcome on
/// its own scores 1.
fn univariate_r2(data: &Dataset, j: usize, ll_null: f64) -> f64 {
    let xj = data.x.select_columns(&[j]);
    match fit_mle(&xj, &data.y, true) {
        Ok(f) if f.converged => mcfadden_r2(f.loglik, ll_null).clamp(0.0, 1.0),
        Ok(_) | Err(GlmError::SeparationSuspected) => 1.0,
        Err(_) => 0.0,
    }
}

/// Correlation screening to at most 80 predictors, then pseudo-R² screening
/// to 30. Below 30 predictors everything is kept. Returns ascending indices.
pub fn screen_variables(data: &Dataset) -> Vec<usize> {
    let p = data.p();
    if p < SCREEN_MIN_P {
        return (0..p).collect();
    }
    let y: Vec<f64> = data.y.iter().copied().collect();
    let mut by_corr: Vec<(usize, f64)> = (0..p)
        .map(|j| {
            let col: Vec<f64> = data.x.column(j).iter().copied().collect();
            (j, correlation(&col, &y).abs())
        })
        .collect();
    by_corr.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    by_corr.truncate(CORRELATION_KEEP.min(p));
    let mut kept: Vec<usize> = if by_corr.len() > SCREEN_KEEP {
        let ll_null = null_loglik(&data.y);
        let r2: Vec<f64> = by_corr
            .par_iter()
            .map(|&(j, _)| univariate_r2(data, j, ll_null))
            .collect();
        let mut ranked: Vec<(usize, usize, f64)> = by_corr
            .iter()
            .zip(r2)
            .enumerate()
            .map(|(rank, (&(j, _), r))| (rank, j, r))
            .collect();
        ranked.sort_by(|a, b| b.2.total_cmp(&a.2).then(a.0.cmp(&b.0)));
        ranked.into_iter().take(SCREEN_KEEP).map(|(_, j, _)| j).collect()
    } else {
        by_corr.into_iter().map(|(j, _)| j).collect()
    };
    kept.sort_unstable();
    kept
}

/// Log-spaced ridge grid, ascending.
pub fn ridge_grid() -> Vec<f64> {
    let (a, b) = (RIDGE_GRID_MIN.ln(), RIDGE_GRID_MAX.ln());
    (0..RIDGE_GRID_LEN)
        .map(|k| (a + (b - a) * k as f64 / (RIDGE_GRID_LEN - 1) as f64).exp())
        .collect()
}

/// Smallest grid ridge penalty whose slopes stay within `MAX_ABS_BETA`;
/// the largest grid value if none does. Returns intercept-first coefficients.
fn ridge_stabilize(x: &DMatrix<f64>, y: &DVector<f64>) -> Result<Vec<f64>, DgpError> {
    let st = Standardizer::fit(x);
    let xs = st.transform(x);
    let spec = PenaltySpec::ridge();
    let mut last = None;
    for lam in ridge_grid() {
        let fit = fit_penalized(&xs, y, &spec, lam, None).map_err(|e| DgpError::Fit(e.to_string()))?;
        let coef = st.to_original(fit.intercept, &fit.beta);
        if coef[1..].iter().all(|b| b.abs() <= MAX_ABS_BETA) {
            return Ok(coef);
        }
        last = Some(coef);
    }
    last.ok_or_else(|| DgpError::Fit("empty ridge grid".into()))
}

fn univariate_significant(x: &DMatrix<f64>, y: &DVector<f64>) -> Vec<usize> {
    (0..x.ncols())
        .filter(|&j| match fit_mle(&x.select_columns(&[j]), y, true) {
            Ok(f) => f.converged && f.pvalues[1] < 0.05,
            Err(GlmError::SeparationSuspected) => true,
            Err(_) => false,
        })
        .collect()
}

/// Builds the generating model on the screened predictors: backward
/// stepwise at the chi-square(1) 95% penalty, forward if the full model does
/// not fit, univariate significance if forward fails or selects nothing;
/// then a ridge refit if
/// the selected model's slopes are undefined or exceed 10 in magnitude.
pub fn fit_generating_model(data: &Dataset, screened: &[usize]) -> Result<GeneratingModel, DgpError> {
    if screened.is_empty() {
        return Err(DgpError::NoPredictors);
    }
    let xs = data.x.select_columns(screened);
    let y = &data.y;
    let local: Vec<usize> = match stepwise_select(&xs, y, &StepwiseConfig::new(Direction::Backward, CHI2_1_95)) {
        Ok(sel) => sel.selected,
        // forward search prunes candidates whose fit fails, so an empty
        // result here usually means the informative moves were unfittable
        Err(_) => match stepwise_select(&xs, y, &StepwiseConfig::new(Direction::Forward, CHI2_1_95)) {
            Ok(sel) if !sel.selected.is_empty() => sel.selected,
            _ => univariate_significant(&xs, y),
        },
    };
    if local.is_empty() {
        return Err(DgpError::EmptyModelSelected);
    }
    let selected: Vec<usize> = local.iter().map(|&k| screened[k]).collect();
    let xsel = data.x.select_columns(&selected);

    let mle = fit_mle(&xsel, y, true)
        .ok()
        .filter(|f| f.converged && f.slopes().iter().all(|b| b.is_finite() && b.abs() <= MAX_ABS_BETA));
    let (coef, separation_handled) = match mle {
        Some(f) => (f.beta, false),
        None => (ridge_stabilize(&xsel, y)?, true),
    };

    let p = data.p();
    let mut beta_dgm = vec![0.0; p + 1];
    beta_dgm[0] = coef[0];
    for (k, &j) in selected.iter().enumerate() {
        beta_dgm[j + 1] = coef[k + 1];
    }
    let b = DVector::from_vec(coef);
    let design = with_intercept(&xsel);
    let eta = &design * &b;
    let pi = eta.iter().map(|e| prob(e.clamp(-ETA_CLIP, ETA_CLIP))).collect();
    let r2 = mcfadden_r2(loglik(&b, &design, y), null_loglik(y));
    Ok(GeneratingModel {
        names: selected.iter().map(|&j| data.names[j].clone()).collect(),
        selected,
        beta_dgm,
        pi,
        pseudo_r2: r2.clamp(0.0, 1.0 - f64::EPSILON),
        separation_handled,
    })
}

/// Screens and fits in one call.
pub fn build_generating_model(data: &Dataset) -> Result<GeneratingModel, DgpError> {
    fit_generating_model(data, &screen_variables(data))
}

/// `m` independent Bernoulli(`pi`) outcome vectors. Replicate `r` draws from
/// its own ChaCha stream, so replicates do not depend on evaluation order.
pub fn simulate_outcomes(gm: &GeneratingModel, m: usize, seed: u64) -> Vec<DVector<f64>> {
    (0..m)
        .into_par_iter()
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(r as u64);
            DVector::from_iterator(
                gm.pi.len(),
                gm.pi.iter().map(|&p| if rng.random::<f64>() < p { 1.0 } else { 0.0 }),
            )
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, Normal};

    fn design(n: usize, p: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, 1.0).unwrap();
        DMatrix::from_fn(n, p, |_, _| normal.sample(&mut rng))
    }

    fn bernoulli_outcome(x: &DMatrix<f64>, beta: &[f64], seed: u64) -> DVector<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DVector::from_fn(x.nrows(), |i, _| {
            let eta = beta[0] + (0..x.ncols()).map(|j| beta[j + 1] * x[(i, j)]).sum::<f64>();
            if rng.random::<f64>() < 1.0 / (1.0 + (-eta).exp()) {
                1.0
            } else {
                0.0
            }
        })
    }

    #[test]
    fn small_p_is_not_screened() {
        let x = design(50, 11, 1);
        let y = bernoulli_outcome(&x, &[0.0; 12], 2);
        assert_eq!(screen_variables(&Dataset::from_parts(x, y)), (0..11).collect::<Vec<_>>());
    }

    #[test]
    fn large_p_screens_to_thirty() {
        let x = design(120, 100, 3);
        let mut beta = vec![0.0; 101];
        beta[8] = 1.5;
        let y = bernoulli_outcome(&x, &beta, 4);
        let kept = screen_variables(&Dataset::from_parts(x, y));
        assert_eq!(kept.len(), 30);
        assert!(kept.contains(&7));
    }

    #[test]
    fn clipped_probability() {
        assert!((prob(15.0f64.clamp(-ETA_CLIP, ETA_CLIP)) - 0.9999546).abs() < 1e-7);
    }

    #[test]
    fn strong_predictors_are_selected() {
        let x = design(300, 5, 5);
        let y = bernoulli_outcome(&x, &[0.0, 1.5, -1.2, 0.0, 0.0, 0.0], 6);
        let gm = build_generating_model(&Dataset::from_parts(x, y)).unwrap();
        assert!(gm.selected.contains(&0) && gm.selected.contains(&1));
        assert!(gm.pseudo_r2 > 0.1);
        for j in 0..5 {
            if !gm.selected.contains(&j) {
                assert_eq!(gm.beta_dgm[j + 1], 0.0);
            }
        }
        assert!(!gm.separation_handled);
    }

    #[test]
    fn separated_design_is_ridge_stabilized() {
        let x = design(40, 3, 7);
        let y = DVector::from_fn(40, |i, _| if x[(i, 0)] > 0.0 { 1.0 } else { 0.0 });
        let gm = build_generating_model(&Dataset::from_parts(x, y)).unwrap();
        assert!(gm.separation_handled);
        assert!(gm.slopes().iter().all(|b| b.abs() <= MAX_ABS_BETA));
        assert!(gm.pi.iter().all(|&p| p > 0.0 && p < 1.0));
    }

    #[test]
    fn replicates_are_deterministic() {
        let gm = GeneratingModel {
            selected: vec![],
            names: vec![],
            beta_dgm: vec![0.0],
            pi: vec![0.3; 20],
            pseudo_r2: 0.0,
            separation_handled: false,
        };
        let a = simulate_outcomes(&gm, 100, 11);
        let b = simulate_outcomes(&gm, 100, 11);
        assert_eq!(a.len(), 100);
        assert!(a.iter().all(|v| v.len() == 20));
        assert_eq!(a, b);
        assert_ne!(a, simulate_outcomes(&gm, 100, 12));
    }
}
