//! Penalized logistic regression by IRLS with cyclic coordinate descent.
//!
//! The objective is
//!
//! ```text
//! -loglik(b0, b) / n + sum_j pen(b_j)
//! ```
//!
//! with `pen` one of ridge, elastic net, lasso (all of the form
//! `lambda * (alpha |b| + (1 - alpha) b^2 / 2)`), MCP or SCAD. The intercept
//! is never penalized. Each coordinate subproblem is minimized exactly over
//! the pieces of the penalty, so non-convex penalties are handled even when
//! the local curvature is below the concavity of the penalty.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::glm::{log1p_exp, prob, sigmoid};
use crate::ingest::{fold_split, make_folds};

pub const DEFAULT_PATH_LEN: usize = 100;
pub const DEFAULT_CV_FOLDS: usize = 10;
pub const COEF_TOL: f64 = 1e-7;
pub const MAX_SWEEPS: usize = 100_000;
const MIN_WEIGHT: f64 = 1e-5;
const MAX_HALVINGS: usize = 20;
/// Path fitting stops once this fraction of the null deviance is explained.
const SATURATION: f64 = 0.999;
/// Relative slack on the zero threshold so that `lambda_max` itself, computed
/// by a different summation order, still zeroes every slope.
const THRESHOLD_SLACK: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PenalizedError {
    #[error("invalid penalty: {0}")]
    InvalidSpec(String),
    #[error("coordinate descent did not converge within {MAX_SWEEPS} sweeps")]
    NoConvergence,
    #[error("only {ok} of {k} tuning folds succeeded")]
    TooManyFoldFailures { ok: usize, k: usize },
    #[error("cannot build tuning folds: {0}")]
    Folds(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PenaltyFamily {
    Ridge,
    ElasticNet,
    Lasso,
    Mcp,
    Scad,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PenaltySpec {
    pub family: PenaltyFamily,
    /// Share of the penalty that is L1-type; the rest is a ridge term.
    pub alpha: f64,
    /// Concavity for MCP/SCAD; ignored otherwise.
    pub gamma: f64,
}

impl PenaltySpec {
    pub fn ridge() -> Self {
        PenaltySpec {
            family: PenaltyFamily::Ridge,
            alpha: 0.0,
            gamma: f64::INFINITY,
        }
    }

    pub fn elastic_net() -> Self {
        PenaltySpec {
            family: PenaltyFamily::ElasticNet,
            alpha: 0.5,
            gamma: f64::INFINITY,
        }
    }

    pub fn lasso() -> Self {
        PenaltySpec {
            family: PenaltyFamily::Lasso,
            alpha: 1.0,
            gamma: f64::INFINITY,
        }
    }

    pub fn mcp(gamma: f64) -> Self {
        PenaltySpec {
            family: PenaltyFamily::Mcp,
            alpha: 1.0,
            gamma,
        }
    }

    pub fn scad(gamma: f64) -> Self {
        PenaltySpec {
            family: PenaltyFamily::Scad,
            alpha: 1.0,
            gamma,
        }
    }

    pub fn validate(&self) -> Result<(), PenalizedError> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(PenalizedError::InvalidSpec(format!("alpha {} outside [0,1]", self.alpha)));
        }
        match self.family {
            PenaltyFamily::Mcp if !(self.gamma > 1.0) => {
                Err(PenalizedError::InvalidSpec(format!("MCP needs gamma > 1, got {}", self.gamma)))
            }
            PenaltyFamily::Scad if !(self.gamma > 2.0) => {
                Err(PenalizedError::InvalidSpec(format!("SCAD needs gamma > 2, got {}", self.gamma)))
            }
            _ => Ok(()),
        }
    }

    pub fn is_convex(&self) -> bool {
        matches!(
            self.family,
            PenaltyFamily::Ridge | PenaltyFamily::ElasticNet | PenaltyFamily::Lasso
        )
    }

    /// Penalty of a single coefficient at strength `lambda`.
    pub fn value(&self, b: f64, lambda: f64) -> f64 {
        let l1 = lambda * self.alpha;
        let l2 = lambda * (1.0 - self.alpha);
        0.5 * l2 * b * b + self.sparse_part(b.abs(), l1)
    }

    fn sparse_part(&self, t: f64, l1: f64) -> f64 {
        let g = self.gamma;
        match self.family {
            PenaltyFamily::Ridge | PenaltyFamily::ElasticNet | PenaltyFamily::Lasso => l1 * t,
            PenaltyFamily::Mcp => {
                if t <= g * l1 {
                    l1 * t - t * t / (2.0 * g)
                } else {
                    0.5 * g * l1 * l1
                }
            }
            PenaltyFamily::Scad => {
                if t <= l1 {
                    l1 * t
                } else if t <= g * l1 {
                    (2.0 * g * l1 * t - t * t - l1 * l1) / (2.0 * (g - 1.0))
                } else {
                    0.5 * l1 * l1 * (g + 1.0)
                }
            }
        }
    }

    /// Exact minimizer of `v b^2 / 2 - z b + pen(b)` (with `v > 0`).
    pub fn coordinate_update(&self, z: f64, v: f64, lambda: f64) -> f64 {
        let l1 = lambda * self.alpha;
        let l2 = lambda * (1.0 - self.alpha);
        let vv = v + l2;
        let a = z.abs();
        let s = z.signum();
        if a <= l1 * (1.0 + THRESHOLD_SLACK) {
            // zero is optimal whenever |z| <= l1 for all three families
            return 0.0;
        }
        let t = match self.family {
            PenaltyFamily::Ridge | PenaltyFamily::ElasticNet | PenaltyFamily::Lasso => (a - l1) / vv,
            PenaltyFamily::Mcp | PenaltyFamily::Scad => {
                let g = self.gamma;
                let obj = |t: f64| 0.5 * vv * t * t - a * t + self.sparse_part(t, l1);
                let mut cands = vec![0.0, l1, g * l1, a / vv];
                match self.family {
                    PenaltyFamily::Mcp => {
                        let c = vv - 1.0 / g;
                        if c > 0.0 {
                            cands.push((a - l1) / c);
                        }
                    }
                    _ => {
                        cands.push((a - l1) / vv);
                        let c = vv - 1.0 / (g - 1.0);
                        if c > 0.0 {
                            cands.push((a - g * l1 / (g - 1.0)) / c);
                        }
                    }
                }
                let mut best = 0.0;
                let mut best_val = 0.0;
                for t in cands {
                    if !(t.is_finite() && t > 0.0) {
                        continue;
                    }
                    let val = obj(t);
                    if val < best_val {
                        best = t;
                        best_val = val;
                    }
                }
                best
            }
        };
        s * t
    }
}

/// A penalized fit at a single lambda.
#[derive(Debug, Clone, PartialEq)]
pub struct PenalizedFit {
    pub intercept: f64,
    pub beta: Vec<f64>,
    pub lambda: f64,
    /// Objective after each outer (reweighting) iteration.
    pub objective_trace: Vec<f64>,
    pub sweeps: usize,
}

impl PenalizedFit {
    /// Intercept-first coefficient vector.
    pub fn coefficients(&self) -> DVector<f64> {
        let mut v = Vec::with_capacity(self.beta.len() + 1);
        v.push(self.intercept);
        v.extend_from_slice(&self.beta);
        DVector::from_vec(v)
    }
}

/// Penalized objective `-loglik / n + sum_j pen(b_j)`.
pub fn objective(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    spec: &PenaltySpec,
    lambda: f64,
    b0: f64,
    beta: &[f64],
) -> f64 {
    let n = x.nrows();
    let mut nll = 0.0;
    for i in 0..n {
        let eta = b0 + (0..beta.len()).map(|j| x[(i, j)] * beta[j]).sum::<f64>();
        nll -= y[i] * eta - log1p_exp(eta);
    }
    nll / n as f64 + beta.iter().map(|&b| spec.value(b, lambda)).sum::<f64>()
}

fn linear_predictor(x: &DMatrix<f64>, b0: f64, beta: &[f64]) -> Vec<f64> {
    let n = x.nrows();
    let mut eta = vec![b0; n];
    for (j, &b) in beta.iter().enumerate() {
        if b != 0.0 {
            for i in 0..n {
                eta[i] += x[(i, j)] * b;
            }
        }
    }
    eta
}

fn starting_point(y: &DVector<f64>, p: usize) -> (f64, Vec<f64>) {
    let ybar = y.mean().clamp(1e-6, 1.0 - 1e-6);
    ((ybar / (1.0 - ybar)).ln(), vec![0.0; p])
}

/// Fits at one lambda, optionally warm-started from `(intercept, beta)`.
pub fn fit_penalized(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    spec: &PenaltySpec,
    lambda: f64,
    warm: Option<(f64, &[f64])>,
) -> Result<PenalizedFit, PenalizedError> {
    spec.validate()?;
    let (n, p) = (x.nrows(), x.ncols());
    let nf = n as f64;
    let (mut b0, mut beta) = match warm {
        Some((a, b)) => (a, b.to_vec()),
        None => starting_point(y, p),
    };
    let mut f_old = objective(x, y, spec, lambda, b0, &beta);
    let mut trace = vec![f_old];
    let mut sweeps = 0usize;

    loop {
        let eta = linear_predictor(x, b0, &beta);
        let mut w = vec![0.0; n];
        let mut res = vec![0.0; n];
        for i in 0..n {
            let pi = sigmoid(eta[i]);
            w[i] = (pi * (1.0 - pi)).max(MIN_WEIGHT);
            res[i] = (y[i] - pi) / w[i];
        }
        let wsum: f64 = w.iter().sum();
        let v: Vec<f64> = (0..p)
            .map(|j| (0..n).map(|i| w[i] * x[(i, j)] * x[(i, j)]).sum::<f64>() / nf)
            .collect();

        let mut nb0 = b0;
        let mut nb = beta.clone();
        loop {
            if sweeps >= MAX_SWEEPS {
                return Err(PenalizedError::NoConvergence);
            }
            sweeps += 1;
            let d0 = (0..n).map(|i| w[i] * res[i]).sum::<f64>() / wsum;
            nb0 += d0;
            res.iter_mut().for_each(|r| *r -= d0);
            let mut max_change = d0.abs();
            for j in 0..p {
                if v[j] <= 0.0 {
                    continue;
                }
                let z = (0..n).map(|i| w[i] * x[(i, j)] * res[i]).sum::<f64>() / nf + v[j] * nb[j];
                let new = spec.coordinate_update(z, v[j], lambda);
                let delta = new - nb[j];
                if delta != 0.0 {
                    for i in 0..n {
                        res[i] -= x[(i, j)] * delta;
                    }
                    nb[j] = new;
                    max_change = max_change.max(delta.abs());
                }
            }
            if max_change < COEF_TOL {
                break;
            }
        }

        // backtrack toward the previous iterate if the true objective rose
        let mut t = 1.0;
        let mut cand0 = nb0;
        let mut cand = nb.clone();
        let mut f_new = objective(x, y, spec, lambda, cand0, &cand);
        let mut halvings = 0;
        while !(f_new <= f_old) && halvings < MAX_HALVINGS {
            t *= 0.5;
            cand0 = b0 + t * (nb0 - b0);
            for j in 0..p {
                cand[j] = beta[j] + t * (nb[j] - beta[j]);
            }
            f_new = objective(x, y, spec, lambda, cand0, &cand);
            halvings += 1;
        }
        if !(f_new <= f_old) {
            break;
        }
        let change = (cand0 - b0)
            .abs()
            .max(cand.iter().zip(&beta).fold(0.0_f64, |m, (a, b)| m.max((a - b).abs())));
        b0 = cand0;
        beta = cand;
        f_old = f_new;
        trace.push(f_new);
        if change < COEF_TOL {
            break;
        }
    }

    Ok(PenalizedFit {
        intercept: b0,
        beta,
        lambda,
        objective_trace: trace,
        sweeps,
    })
}

/// Column centering and scaling used before penalized fits.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    pub means: Vec<f64>,
    /// Population standard deviations; constant columns keep scale 1.
    pub scales: Vec<f64>,
}

impl Standardizer {
    pub fn fit(x: &DMatrix<f64>) -> Self {
        let n = x.nrows() as f64;
        let mut means = Vec::with_capacity(x.ncols());
        let mut scales = Vec::with_capacity(x.ncols());
        for c in x.column_iter() {
            let m = c.mean();
            let v = c.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n;
            means.push(m);
            scales.push(if v > 0.0 { v.sqrt() } else { 1.0 });
        }
        Standardizer { means, scales }
    }

    pub fn transform(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        DMatrix::from_fn(x.nrows(), x.ncols(), |i, j| (x[(i, j)] - self.means[j]) / self.scales[j])
    }

    /// Maps `(intercept, slopes)` on the standardized scale back to the
    /// original columns; returns an intercept-first vector.
    pub fn to_original(&self, intercept: f64, beta: &[f64]) -> Vec<f64> {
        let mut out = Vec::with_capacity(beta.len() + 1);
        let slopes: Vec<f64> = beta.iter().zip(&self.scales).map(|(b, s)| b / s).collect();
        out.push(intercept - slopes.iter().zip(&self.means).map(|(b, m)| b * m).sum::<f64>());
        out.extend(slopes);
        out
    }
}

/// Descending log-spaced lambda grid starting at the smallest lambda that
/// zeroes every slope (for sparsity-inducing families).
pub fn lambda_path(x: &DMatrix<f64>, y: &DVector<f64>, spec: &PenaltySpec, len: usize) -> Vec<f64> {
    assert!(len >= 2, "path needs at least two lambdas");
    let (n, p) = (x.nrows(), x.ncols());
    let ybar = y.mean();
    let max_grad = (0..p)
        .map(|j| (0..n).map(|i| x[(i, j)] * (y[i] - ybar)).sum::<f64>().abs())
        .fold(0.0_f64, f64::max);
    let lambda_max = (max_grad / (n as f64 * spec.alpha.max(0.001))).max(1e-10);
    let ratio: f64 = if n > p { 1e-4 } else { 1e-2 };
    let step = ratio.ln() / (len - 1) as f64;
    (0..len)
        .map(|k| {
            if k == len - 1 {
                lambda_max * ratio
            } else {
                lambda_max * (step * k as f64).exp()
            }
        })
        .collect()
}

fn deviance(y: &DVector<f64>, probs: &[f64]) -> f64 {
    -2.0 * y
        .iter()
        .zip(probs)
        .map(|(&yi, &p)| yi * p.ln() + (1.0 - yi) * (1.0 - p).ln())
        .sum::<f64>()
}

/// Warm-started fits along `lambdas`. Stops early once the fit saturates or
/// a later lambda fails to converge, so the returned path may be shorter
/// than the grid.
pub fn fit_path(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    spec: &PenaltySpec,
    lambdas: &[f64],
) -> Result<Vec<PenalizedFit>, PenalizedError> {
    let n = y.len() as f64;
    let ybar = y.mean();
    let null_dev = deviance(y, &vec![ybar.clamp(1e-12, 1.0 - 1e-12); y.len()]);
    let mut out: Vec<PenalizedFit> = Vec::with_capacity(lambdas.len());
    for &lam in lambdas {
        let warm = out.last().map(|f| (f.intercept, f.beta.as_slice()));
        let fit = match fit_penalized(x, y, spec, lam, warm) {
            Ok(f) => f,
            Err(PenalizedError::NoConvergence) if !out.is_empty() => {
                log::warn!("no convergence at lambda {lam:.3e}; path truncated after {} values", out.len());
                break;
            }
            Err(e) => return Err(e),
        };
        let probs: Vec<f64> = linear_predictor(x, fit.intercept, &fit.beta)
            .into_iter()
            .map(prob)
            .collect();
        let dev = deviance(y, &probs);
        out.push(fit);
        if null_dev > 0.0 && 1.0 - dev / null_dev >= SATURATION {
            log::debug!("path saturated at lambda {lam:.3e} (n = {n})");
            break;
        }
    }
    Ok(out)
}

/// Path plus cross-validated choice of lambda.
#[derive(Debug, Clone, PartialEq)]
pub struct PathResult {
    pub lambdas: Vec<f64>,
    pub intercepts: Vec<f64>,
    /// Slopes per grid point.
    pub coefs: Vec<Vec<f64>>,
    pub cv_deviance: Vec<f64>,
    pub selected_index: usize,
    pub selected_lambda: f64,
}

impl PathResult {
    /// (p+1) x L matrix, intercept in row 0.
    pub fn coef_matrix(&self) -> DMatrix<f64> {
        let p = self.coefs.first().map_or(0, Vec::len);
        DMatrix::from_fn(p + 1, self.lambdas.len(), |r, c| {
            if r == 0 {
                self.intercepts[c]
            } else {
                self.coefs[c][r - 1]
            }
        })
    }

    /// Intercept-first coefficients at the selected lambda.
    pub fn selected_coefficients(&self) -> DVector<f64> {
        let k = self.selected_index;
        let mut v = vec![self.intercepts[k]];
        v.extend_from_slice(&self.coefs[k]);
        DVector::from_vec(v)
    }
}

/// k-fold cross-validation over a shared lambda grid; picks the lambda with
/// the smallest mean held-out binomial deviance.
pub fn cv_select_lambda(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    spec: &PenaltySpec,
    k: usize,
    seed: u64,
    path_len: usize,
) -> Result<PathResult, PenalizedError> {
    spec.validate()?;
    let n = y.len();
    let lambdas = lambda_path(x, y, spec, path_len);
    let full = fit_path(x, y, spec, &lambdas)?;
    let len = full.len();
    let lambdas = lambdas[..len].to_vec();

    let k_eff = k.min(n / 2).max(2);
    if k_eff != k {
        log::debug!("reducing tuning folds from {k} to {k_eff} for n = {n}");
    }
    let ys: Vec<f64> = y.iter().copied().collect();
    let labels = make_folds(&ys, k_eff, seed, false).map_err(|e| PenalizedError::Folds(e.to_string()))?;

    let mut dev_sum = vec![0.0; len];
    let mut count = 0usize;
    let mut ok = 0usize;
    for fold in 0..k_eff {
        let (train, test) = fold_split(&labels, fold);
        let xtr = x.select_rows(&train);
        let ytr = DVector::from_iterator(train.len(), train.iter().map(|&i| y[i]));
        let ones = ytr.iter().filter(|&&v| v > 0.5).count();
        if ones == 0 || ones == ytr.len() {
            continue;
        }
        let path = match fit_path(&xtr, &ytr, spec, &lambdas) {
            Ok(p) => p,
            Err(e) => {
                log::debug!("tuning fold {fold} failed: {e}");
                continue;
            }
        };
        ok += 1;
        let xte = x.select_rows(&test);
        let yte = DVector::from_iterator(test.len(), test.iter().map(|&i| y[i]));
        for l in 0..len {
            let f = &path[l.min(path.len() - 1)];
            let probs: Vec<f64> = linear_predictor(&xte, f.intercept, &f.beta)
                .into_iter()
                .map(prob)
                .collect();
            dev_sum[l] += deviance(&yte, &probs);
        }
        count += test.len();
    }
    if 2 * ok < k_eff || count == 0 {
        return Err(PenalizedError::TooManyFoldFailures { ok, k: k_eff });
    }
    let cv_deviance: Vec<f64> = dev_sum.iter().map(|d| d / count as f64).collect();
    let mut best = 0;
    for l in 1..len {
        if cv_deviance[l] < cv_deviance[best] {
            best = l;
        }
    }
    Ok(PathResult {
        selected_lambda: lambdas[best],
        lambdas,
        intercepts: full.iter().map(|f| f.intercept).collect(),
        coefs: full.into_iter().map(|f| f.beta).collect(),
        cv_deviance,
        selected_index: best,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spec_validation() {
        assert!(PenaltySpec::mcp(1.0).validate().is_err());
        assert!(PenaltySpec::scad(2.0).validate().is_err());
        assert!(PenaltySpec::mcp(3.0).validate().is_ok());
        let mut s = PenaltySpec::lasso();
        s.alpha = 1.5;
        assert!(s.validate().is_err());
    }

    #[test]
    fn coordinate_update_minimizes_one_dimensional_problem() {
        // brute-force grid over b for each family
        let specs = [
            PenaltySpec::lasso(),
            PenaltySpec::ridge(),
            PenaltySpec::elastic_net(),
            PenaltySpec::mcp(3.0),
            PenaltySpec::scad(3.7),
            PenaltySpec::mcp(1.5),
        ];
        for spec in specs {
            for &(z, v, lam) in &[(0.9, 0.2, 0.3), (-2.0, 0.25, 0.5), (0.1, 1.0, 0.3), (1.3, 0.1, 0.4)] {
                let f = |b: f64| 0.5 * v * b * b - z * b + spec.value(b, lam);
                let b = spec.coordinate_update(z, v, lam);
                let grid_best = (-40000..=40000)
                    .map(|k| k as f64 * 1e-3)
                    .map(f)
                    .fold(f64::INFINITY, f64::min);
                assert!(f(b) <= grid_best + 1e-9, "{spec:?} z={z}: {} vs {}", f(b), grid_best);
            }
        }
    }

    #[test]
    fn path_is_strictly_decreasing_with_fixed_ratio() {
        let x = DMatrix::from_fn(30, 2, |i, j| ((i * (j + 3)) % 7) as f64 - 3.0);
        let y = DVector::from_fn(30, |i, _| (i % 2) as f64);
        let path = lambda_path(&x, &y, &PenaltySpec::lasso(), 100);
        assert_eq!(path.len(), 100);
        assert!(path.windows(2).all(|w| w[1] < w[0]));
        assert!((path[99] / path[0] - 1e-4).abs() < 1e-15);
    }

    #[test]
    fn huge_lambda_zeroes_all_slopes() {
        let x = DMatrix::from_fn(40, 3, |i, j| ((i * 7 + j * 3) % 11) as f64 / 5.0 - 1.0);
        let y = DVector::from_fn(40, |i, _| ((i * 5) % 3 == 0) as u8 as f64);
        let fit = fit_penalized(&x, &y, &PenaltySpec::lasso(), 1e3, None).unwrap();
        assert!(fit.beta.iter().all(|&b| b == 0.0));
        assert!((fit.intercept - (y.mean() / (1.0 - y.mean())).ln()).abs() < 1e-7);
    }
}
