//! Logistic likelihood, Newton/IRLS maximum likelihood, Firth's
//! bias-reduced fit, and probability prediction.
//!
//! Coefficient vectors are laid out intercept first when an intercept is
//! present. Functions that take a raw design `x` expect the intercept
//! column to be already prepended (see [`with_intercept`]).

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

/// Gradient max-norm at which Newton iterations stop.
pub const GRADIENT_TOL: f64 = 1e-8;
/// Any |beta_j| beyond this during ML fitting is taken as separation.
pub const DIVERGENCE_GUARD: f64 = 30.0;
pub const MLE_MAX_ITER: usize = 100;
pub const FIRTH_MAX_ITER: usize = 200;
const MAX_HALVINGS: usize = 20;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GlmError {
    #[error("information matrix is singular")]
    SingularInformation,
    #[error("coefficients diverged beyond {DIVERGENCE_GUARD}; separation suspected")]
    SeparationSuspected,
    #[error("no convergence after {0} iterations")]
    NoConvergence(usize),
    #[error("outcome has a single class")]
    SingleClass,
}

/// log(1 + exp(eta)) without overflow.
#[inline]
pub fn log1p_exp(eta: f64) -> f64 {
    if eta > 0.0 {
        eta + (-eta).exp().ln_1p()
    } else {
        eta.exp().ln_1p()
    }
}

#[inline]
pub fn sigmoid(eta: f64) -> f64 {
    if eta >= 0.0 {
        1.0 / (1.0 + (-eta).exp())
    } else {
        let e = eta.exp();
        e / (1.0 + e)
    }
}

/// Logistic transform clamped so the result is strictly inside (0, 1).
#[inline]
pub fn prob(eta: f64) -> f64 {
    sigmoid(eta).clamp(f64::EPSILON, 1.0 - f64::EPSILON)
}

pub fn with_intercept(x: &DMatrix<f64>) -> DMatrix<f64> {
    x.clone().insert_column(0, 1.0)
}

/// Log-likelihood only.
pub fn loglik(beta: &DVector<f64>, x: &DMatrix<f64>, y: &DVector<f64>) -> f64 {
    let eta = x * beta;
    eta.iter()
        .zip(y.iter())
        .map(|(&e, &yi)| yi * e - log1p_exp(e))
        .sum()
}

#[derive(Debug, Clone)]
pub struct LogLik {
    pub value: f64,
    pub gradient: DVector<f64>,
    pub hessian: DMatrix<f64>,
}

/// X^T diag(w) X.
pub(crate) fn weighted_gram(x: &DMatrix<f64>, w: &[f64]) -> DMatrix<f64> {
    let mut xw = x.clone();
    for (i, &wi) in w.iter().enumerate() {
        let s = wi.sqrt();
        xw.row_mut(i).scale_mut(s);
    }
    xw.tr_mul(&xw)
}

/// Value, gradient X^T(y - pi) and Hessian -X^T W X of the log-likelihood.
pub fn loglik_grad_hess(beta: &DVector<f64>, x: &DMatrix<f64>, y: &DVector<f64>) -> LogLik {
    let eta = x * beta;
    let mut value = 0.0;
    let mut resid = DVector::zeros(y.len());
    let mut w = vec![0.0; y.len()];
    for i in 0..y.len() {
        let e = eta[i];
        value += y[i] * e - log1p_exp(e);
        let p = sigmoid(e);
        resid[i] = y[i] - p;
        w[i] = p * (1.0 - p);
    }
    let gradient = x.tr_mul(&resid);
    let hessian = -weighted_gram(x, &w);
    LogLik {
        value,
        gradient,
        hessian,
    }
}

/// Probabilities for new rows. `beta` may carry a leading intercept
/// (length `x.ncols() + 1`) or not (length `x.ncols()`).
pub fn predict_probs(beta: &DVector<f64>, x: &DMatrix<f64>) -> Vec<f64> {
    let (b0, slopes) = split_intercept(beta, x.ncols());
    (0..x.nrows())
        .map(|i| {
            let eta = b0 + x.row(i).iter().zip(slopes.iter()).map(|(a, b)| a * b).sum::<f64>();
            prob(eta)
        })
        .collect()
}

fn split_intercept(beta: &DVector<f64>, p: usize) -> (f64, DVector<f64>) {
    if beta.len() == p + 1 {
        (beta[0], beta.rows(1, p).into_owned())
    } else {
        assert_eq!(beta.len(), p, "coefficient/design dimension mismatch");
        (0.0, beta.clone())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub beta: Vec<f64>,
    pub se: Vec<f64>,
    pub pvalues: Vec<f64>,
    pub loglik: f64,
    pub converged: bool,
    pub iterations: usize,
    pub intercept: bool,
}

impl FitResult {
    pub fn beta_vec(&self) -> DVector<f64> {
        DVector::from_vec(self.beta.clone())
    }

    /// Slopes only (intercept stripped).
    pub fn slopes(&self) -> &[f64] {
        if self.intercept {
            &self.beta[1..]
        } else {
            &self.beta
        }
    }

    pub fn slope_pvalues(&self) -> &[f64] {
        if self.intercept {
            &self.pvalues[1..]
        } else {
            &self.pvalues
        }
    }

    /// Symmetric Wald intervals `beta ± z * se` for all coefficients.
    pub fn wald_intervals(&self, level: f64) -> (Vec<f64>, Vec<f64>) {
        let z = normal_quantile(0.5 + level / 2.0);
        let lo = self.beta.iter().zip(&self.se).map(|(b, s)| b - z * s).collect();
        let hi = self.beta.iter().zip(&self.se).map(|(b, s)| b + z * s).collect();
        (lo, hi)
    }
}

pub fn normal_quantile(p: f64) -> f64 {
    use statrs::distribution::{ContinuousCDF, Normal};
    Normal::standard().inverse_cdf(p)
}

/// Two-sided Wald p-value for a z statistic.
pub fn wald_pvalue(z: f64) -> f64 {
    if !z.is_finite() {
        return if z.is_nan() { 1.0 } else { 0.0 };
    }
    statrs::function::erf::erfc(z.abs() / std::f64::consts::SQRT_2).clamp(0.0, 1.0)
}

/// Cholesky with a relative pivot check; near-singular matrices are rejected.
pub(crate) fn checked_cholesky(m: DMatrix<f64>) -> Result<Cholesky<f64, Dyn>, GlmError> {
    let scale = m.diagonal().iter().fold(0.0_f64, |a, &b| a.max(b.abs()));
    if !(scale > 0.0) || !scale.is_finite() {
        return Err(GlmError::SingularInformation);
    }
    let chol = Cholesky::new(m).ok_or(GlmError::SingularInformation)?;
    let min_pivot = chol.l_dirty().diagonal().iter().fold(f64::INFINITY, |a, &b| a.min(b * b));
    if min_pivot < 1e-13 * scale {
        return Err(GlmError::SingularInformation);
    }
    Ok(chol)
}

pub(crate) fn log_det_chol(chol: &Cholesky<f64, Dyn>) -> f64 {
    2.0 * chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>()
}

/// Result of a Newton ascent on `loglik(beta) - beta^T Q beta / 2`.
#[derive(Debug, Clone)]
pub struct NewtonFit {
    pub beta: DVector<f64>,
    /// Penalized objective at `beta`.
    pub objective: f64,
    pub loglik: f64,
    /// Negative Hessian of the penalized objective at `beta`.
    pub neg_hessian: DMatrix<f64>,
    pub converged: bool,
    pub iterations: usize,
}

/// Damped Newton ascent on a log-likelihood with optional quadratic penalty.
///
/// `guard` stops the iteration with [`GlmError::SeparationSuspected`] as soon
/// as any coefficient exceeds it in magnitude.
pub fn newton_fit(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    penalty: Option<&DMatrix<f64>>,
    init: Option<&DVector<f64>>,
    max_iter: usize,
    guard: Option<f64>,
) -> Result<NewtonFit, GlmError> {
    let q = x.ncols();
    let objective = |b: &DVector<f64>| -> f64 {
        let mut v = loglik(b, x, y);
        if let Some(pm) = penalty {
            v -= 0.5 * b.dot(&(pm * b));
        }
        v
    };
    let mut beta = init.cloned().unwrap_or_else(|| DVector::zeros(q));
    let mut iterations = 0;
    let mut converged = false;
    let mut ll = loglik_grad_hess(&beta, x, y);
    loop {
        let mut grad = ll.gradient.clone();
        let mut neg_h = -ll.hessian.clone();
        let mut obj = ll.value;
        if let Some(pm) = penalty {
            grad -= pm * &beta;
            neg_h += pm;
            obj -= 0.5 * beta.dot(&(pm * &beta));
        }
        if grad.amax() <= GRADIENT_TOL {
            converged = true;
        }
        if converged || iterations >= max_iter {
            return Ok(NewtonFit {
                beta,
                objective: obj,
                loglik: ll.value,
                neg_hessian: neg_h,
                converged,
                iterations,
            });
        }
        let chol = checked_cholesky(neg_h)?;
        let step = chol.solve(&grad);
        iterations += 1;

        let mut t = 1.0;
        let mut accepted = None;
        if grad.dot(&step) <= 1e-12 * (1.0 + obj.abs()) {
            // predicted gain is below what the objective can resolve
            accepted = Some(&beta + &step);
        }
        for _ in 0..=MAX_HALVINGS {
            if accepted.is_some() {
                break;
            }
            let cand = &beta + &step * t;
            let v = objective(&cand);
            if v.is_finite() && v >= obj {
                accepted = Some(cand);
                break;
            }
            t *= 0.5;
        }
        let Some(next) = accepted else {
            // no ascent possible from here; report as is
            let neg_h = {
                let mut h = -ll.hessian.clone();
                if let Some(pm) = penalty {
                    h += pm;
                }
                h
            };
            return Ok(NewtonFit {
                beta,
                objective: obj,
                loglik: ll.value,
                neg_hessian: neg_h,
                converged: false,
                iterations,
            });
        };
        beta = next;
        if let Some(g) = guard {
            if beta.iter().any(|b| !b.is_finite() || b.abs() > g) {
                return Err(GlmError::SeparationSuspected);
            }
        }
        ll = loglik_grad_hess(&beta, x, y);
    }
}

fn check_both_classes(y: &DVector<f64>) -> Result<(), GlmError> {
    let ones = y.iter().filter(|&&v| v > 0.5).count();
    if ones == 0 || ones == y.len() {
        return Err(GlmError::SingleClass);
    }
    Ok(())
}

fn finish_fit(
    beta: DVector<f64>,
    info: DMatrix<f64>,
    loglik: f64,
    converged: bool,
    iterations: usize,
    intercept: bool,
) -> Result<FitResult, GlmError> {
    let chol = checked_cholesky(info)?;
    let cov = chol.inverse();
    let se: Vec<f64> = cov.diagonal().iter().map(|v| v.max(0.0).sqrt()).collect();
    let pvalues = beta
        .iter()
        .zip(&se)
        .map(|(b, s)| wald_pvalue(b / s))
        .collect();
    Ok(FitResult {
        beta: beta.iter().copied().collect(),
        se,
        pvalues,
        loglik,
        converged,
        iterations,
        intercept,
    })
}

/// Maximum likelihood by Newton/IRLS with step halving.
///
/// `x` holds predictors only; the intercept column is added when requested.
pub fn fit_mle(x: &DMatrix<f64>, y: &DVector<f64>, intercept: bool) -> Result<FitResult, GlmError> {
    check_both_classes(y)?;
    let design = if intercept { with_intercept(x) } else { x.clone() };
    let init = if intercept {
        let ybar = y.mean();
        let mut b = DVector::zeros(design.ncols());
        b[0] = (ybar / (1.0 - ybar)).ln();
        Some(b)
    } else {
        None
    };
    let fit = newton_fit(&design, y, None, init.as_ref(), MLE_MAX_ITER, Some(DIVERGENCE_GUARD))?;
    finish_fit(
        fit.beta,
        fit.neg_hessian,
        fit.loglik,
        fit.converged,
        fit.iterations,
        intercept,
    )
}

/// Log-likelihood of the intercept-only model.
pub fn null_loglik(y: &DVector<f64>) -> f64 {
    let n = y.len() as f64;
    let k = y.sum();
    let mut v = 0.0;
    if k > 0.0 {
        v += k * (k / n).ln();
    }
    if k < n {
        v += (n - k) * ((n - k) / n).ln();
    }
    v
}

struct FirthState {
    penalized: f64,
    loglik: f64,
    info: DMatrix<f64>,
    score: DVector<f64>,
}

fn firth_state(beta: &DVector<f64>, x: &DMatrix<f64>, y: &DVector<f64>) -> Result<FirthState, GlmError> {
    let n = x.nrows();
    let eta = x * beta;
    let mut pi = vec![0.0; n];
    let mut w = vec![0.0; n];
    let mut loglik = 0.0;
    for i in 0..n {
        loglik += y[i] * eta[i] - log1p_exp(eta[i]);
        pi[i] = sigmoid(eta[i]);
        w[i] = pi[i] * (1.0 - pi[i]);
    }
    let info = weighted_gram(x, &w);
    let chol = checked_cholesky(info.clone())?;
    let penalized = loglik + 0.5 * log_det_chol(&chol);

    // hat diagonals h_i = w_i x_i^T I^{-1} x_i
    let mut xw_t = x.transpose();
    for i in 0..n {
        let s = w[i].sqrt();
        xw_t.column_mut(i).scale_mut(s);
    }
    let l = chol.l();
    let z = l
        .solve_lower_triangular(&xw_t)
        .ok_or(GlmError::SingularInformation)?;
    let mut adj = DVector::zeros(n);
    for i in 0..n {
        let h = z.column(i).norm_squared();
        adj[i] = y[i] - pi[i] + h * (0.5 - pi[i]);
    }
    let score = x.tr_mul(&adj);
    Ok(FirthState {
        penalized,
        loglik,
        info,
        score,
    })
}

/// Firth's bias-reduced fit: maximizes loglik + log det(X^T W X) / 2.
pub fn fit_firth(x: &DMatrix<f64>, y: &DVector<f64>, intercept: bool) -> Result<FitResult, GlmError> {
    const MAX_STEP: f64 = 5.0;
    let design = if intercept { with_intercept(x) } else { x.clone() };
    let q = design.ncols();
    let mut beta = DVector::zeros(q);
    let mut st = firth_state(&beta, &design, y)?;
    for it in 0..FIRTH_MAX_ITER {
        if st.score.amax() <= GRADIENT_TOL {
            return finish_fit(beta, st.info, st.loglik, true, it, intercept);
        }
        let chol = checked_cholesky(st.info.clone())?;
        let mut step = chol.solve(&st.score);
        let big = step.amax();
        if big > MAX_STEP {
            step *= MAX_STEP / big;
        }
        let mut t = 1.0;
        let mut moved = false;
        if st.score.dot(&step) <= 1e-12 * (1.0 + st.penalized.abs()) {
            // predicted gain is below what the objective can resolve
            if let Ok(next) = firth_state(&(&beta + &step), &design, y) {
                beta += &step;
                st = next;
                continue;
            }
        }
        for _ in 0..=MAX_HALVINGS {
            let cand = &beta + &step * t;
            if let Ok(next) = firth_state(&cand, &design, y) {
                if next.penalized >= st.penalized {
                    beta = cand;
                    st = next;
                    moved = true;
                    break;
                }
            }
            t *= 0.5;
        }
        if !moved {
            // numerically at the optimum but the score is not below tolerance
            if st.score.amax() <= 1e-6 {
                return finish_fit(beta, st.info, st.loglik, true, it, intercept);
            }
            return Err(GlmError::NoConvergence(it));
        }
    }
    if st.score.amax() <= GRADIENT_TOL {
        return finish_fit(beta, st.info, st.loglik, true, FIRTH_MAX_ITER, intercept);
    }
    Err(GlmError::NoConvergence(FIRTH_MAX_ITER))
}
