//! Bayesian model averaging over logistic regression submodels.
//!
//! Each model keeps the intercept and a subset of predictors. Slopes get a
//! g-prior `N(0, g P^{-1})` with `P = X_c^T X_c / 4`, the information of the
//! centered predictors at `beta = 0`; the intercept prior is flat. Marginal
//! likelihoods use a Laplace approximation at the posterior mode.

use std::collections::HashMap;
use std::f64::consts::PI;

use log::warn;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::beta::{beta_reg, ln_beta};
use statrs::function::factorial::ln_binomial;

use crate::glm::{
    checked_cholesky, log_det_chol, newton_fit, predict_probs, with_intercept, GlmError, NewtonFit,
    DIVERGENCE_GUARD, MLE_MAX_ITER,
};
use crate::numeric::{adaptive_log_quad, grid_then_golden, log_sum_exp, Mergeable};

/// Largest p for which the model space is enumerated.
pub const ENUMERATION_THRESHOLD: usize = 20;
pub const MC3_ITERATIONS: usize = 10_000;
pub const DEFAULT_DRAWS: usize = 10_000;
/// Search range for empirical Bayes over `log g`.
pub const LOG_G_MIN: f64 = -10.0;
pub const LOG_G_MAX: f64 = 20.0;

const LAPLACE_MAX_ITER: usize = 200;
const QUAD_ORDER: usize = 16;
const QUAD_PANELS: usize = 4;
const QUAD_REL_TOL: f64 = 1e-8;
const QUAD_MAX_DEPTH: usize = 12;
const EB_GRID: usize = 31;
const EB_TOL: f64 = 1e-5;
/// Models this far below the best log posterior are not kept for averaging.
const RETAIN_GAP: f64 = 40.0;
const MAX_RETAINED: usize = 10_000;
/// Above this p, enumeration recomputes retained fits instead of storing all.
const STORE_ALL_FITS_MAX_P: usize = 14;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum BmaError {
    #[error("model design is rank deficient")]
    RankDeficient,
    #[error("posterior mode search did not converge")]
    ModeNotFound,
    #[error("p = {p} exceeds the enumeration threshold {threshold}")]
    EnumerationRequired { p: usize, threshold: usize },
    #[error("every model failed to evaluate")]
    AllModelsFailed,
    #[error("invalid prior: {0}")]
    InvalidPrior(String),
    #[error("MC3 needs at least 1000 iterations, got {0}")]
    TooFewIterations(usize),
    #[error(transparent)]
    Glm(#[from] GlmError),
}

/// Included predictor indices, sorted and unique. The intercept is implicit.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ModelId(Vec<usize>);

impl ModelId {
    pub fn new(mut indices: Vec<usize>) -> Self {
        indices.sort_unstable();
        indices.dedup();
        ModelId(indices)
    }

    pub fn empty() -> Self {
        ModelId(Vec::new())
    }

    pub fn from_mask(mask: u64, p: usize) -> Self {
        ModelId((0..p).filter(|j| mask >> j & 1 == 1).collect())
    }

    pub fn indices(&self) -> &[usize] {
        &self.0
    }

    pub fn size(&self) -> usize {
        self.0.len()
    }

    pub fn contains(&self, j: usize) -> bool {
        self.0.binary_search(&j).is_ok()
    }

    /// The model with predictor `j` added or removed.
    pub fn toggled(&self, j: usize) -> Self {
        let mut v = self.0.clone();
        match v.binary_search(&j) {
            Ok(pos) => {
                v.remove(pos);
            }
            Err(pos) => v.insert(pos, j),
        }
        ModelId(v)
    }
}

/// Densities on g for mixtures of g-priors. `n` is the sample size and `k`
/// the number of slopes in the model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case")]
pub enum MixtureDensity {
    /// `(a-2)/2 (1+g)^{-a/2}`.
    HyperG { a: f64 },
    /// `(a-2)/(2n) (1+g/n)^{-a/2}`.
    HyperGOverN { a: f64 },
    /// Beta-prime with shape `1/2` and `(n-k-1.5)/2` (floored at 1/2).
    BetaPrime,
    /// Shrinkage `t = 1/(1+g)` has density proportional to
    /// `t^{a/2-1} (1-t)^{b/2-1} exp(-s t/2)`; `b = None` means `b = n`.
    Cch { a: f64, b: Option<f64>, s: f64 },
    /// `1/2 sqrt((1+n)/(k+1)) (1+g)^{-3/2}` on `g > (1+n)/(k+1) - 1`.
    Robust,
    /// Shrinkage `Beta(1/2, 1/2)` truncated to `t <= (k+1)/(n+k+1)`.
    Intrinsic,
}

impl MixtureDensity {
    pub fn hyper_g() -> Self {
        MixtureDensity::HyperG { a: 3.0 }
    }

    pub fn hyper_g_over_n() -> Self {
        MixtureDensity::HyperGOverN { a: 3.0 }
    }

    pub fn cch_default() -> Self {
        MixtureDensity::Cch { a: 1.0, b: None, s: 0.0 }
    }

    pub fn validate(&self) -> Result<(), BmaError> {
        let bad = |m: &str| Err(BmaError::InvalidPrior(m.to_string()));
        match *self {
            MixtureDensity::HyperG { a } | MixtureDensity::HyperGOverN { a } if !(a > 2.0) => {
                bad("hyper-g needs a > 2")
            }
            MixtureDensity::Cch { a, b, s } => {
                if !(a > 0.0) || b.is_some_and(|b| !(b > 0.0)) || !(s >= 0.0) {
                    bad("cch needs a > 0, b > 0, s >= 0")
                } else {
                    Ok(())
                }
            }
            _ => Ok(()),
        }
    }

    /// Lower end of the support in g.
    pub fn lower_bound(&self, n: usize, k: usize) -> f64 {
        let (n, k1) = (n as f64, k as f64 + 1.0);
        match self {
            MixtureDensity::Robust => ((1.0 + n) / k1 - 1.0).max(0.0),
            MixtureDensity::Intrinsic => n / k1,
            _ => 0.0,
        }
    }

    /// Log density at `g`; `-inf` outside the support.
    pub fn log_density(&self, g: f64, n: usize, k: usize) -> f64 {
        if !(g > 0.0) || g < self.lower_bound(n, k) {
            return f64::NEG_INFINITY;
        }
        let nf = n as f64;
        let l1g = g.ln_1p();
        match *self {
            MixtureDensity::HyperG { a } => ((a - 2.0) / 2.0).ln() - 0.5 * a * l1g,
            MixtureDensity::HyperGOverN { a } => {
                ((a - 2.0) / (2.0 * nf)).ln() - 0.5 * a * (g / nf).ln_1p()
            }
            MixtureDensity::BetaPrime => {
                let (a, b) = beta_prime_shapes(n, k);
                (a - 1.0) * g.ln() - (a + b) * l1g - ln_beta(a, b)
            }
            MixtureDensity::Cch { a, b, s } => {
                let b = b.unwrap_or(nf);
                let lt = -l1g;
                let l1mt = g.ln() - l1g;
                let t = 1.0 / (1.0 + g);
                (a / 2.0 + 1.0) * lt + (b / 2.0 - 1.0) * l1mt - 0.5 * s * t - cch_log_norm(a, b, s)
            }
            MixtureDensity::Robust => {
                let lo = self.lower_bound(n, k);
                0.5f64.ln() - 1.5 * l1g + 0.5 * lo.ln_1p()
            }
            MixtureDensity::Intrinsic => {
                let tmax = (k as f64 + 1.0) / (nf + k as f64 + 1.0);
                -0.5 * g.ln() - l1g - PI.ln() - beta_reg(0.5, 0.5, tmax).ln()
            }
        }
    }
}

fn beta_prime_shapes(n: usize, k: usize) -> (f64, f64) {
    (0.5, ((n as f64 - k as f64 - 1.5) / 2.0).max(0.5))
}

/// Log of `int_0^1 t^{a/2-1} (1-t)^{b/2-1} exp(-s t/2) dt`.
fn cch_log_norm(a: f64, b: f64, s: f64) -> f64 {
    let (pa, pb) = (a / 2.0, b / 2.0);
    if s == 0.0 {
        return ln_beta(pa, pb);
    }
    ln_beta(pa, pb) + log_kummer_m(pa, pa + pb, -s / 2.0)
}

/// `log M(a; b; z)` for `z <= 0` via Kummer's transformation, which leaves a
/// series with positive terms.
fn log_kummer_m(a: f64, b: f64, z: f64) -> f64 {
    let x = -z;
    let (a2, mut term, mut sum) = (b - a, 1.0f64, 1.0f64);
    for k in 0..100_000 {
        let kf = k as f64;
        term *= (a2 + kf) / (b + kf) * x / (kf + 1.0);
        sum += term;
        if term < 1e-17 * sum {
            break;
        }
    }
    z + sum.ln()
}

/// Prior on slopes, or a pseudo-prior giving an information criterion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GPriorSpec {
    FixedG { g: f64 },
    Mixture { density: MixtureDensity },
    EbLocal,
    EbGlobal,
    Aic,
    Bic,
}

impl GPriorSpec {
    pub fn validate(&self) -> Result<(), BmaError> {
        match self {
            GPriorSpec::FixedG { g } if !(*g > 0.0 && g.is_finite()) => {
                Err(BmaError::InvalidPrior(format!("g must be positive, got {g}")))
            }
            GPriorSpec::Mixture { density } => density.validate(),
            _ => Ok(()),
        }
    }
}

/// Log prior of a model of size `k` under the beta-binomial(1,1) prior
/// truncated to sizes below `n - 2`.
pub fn model_log_prior(k: usize, p: usize, n: usize) -> f64 {
    if k > p || k + 2 >= n {
        return f64::NEG_INFINITY;
    }
    let kmax = p.min(n - 3);
    -((kmax + 1) as f64).ln() - ln_binomial(p as u64, k as u64)
}

/// Laplace Gaussian for one model: mode and covariance over
/// `(intercept, included slopes)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelFit {
    pub log_marginal: f64,
    pub mode: DVector<f64>,
    pub cov: DMatrix<f64>,
    /// The g used, when a single g applies.
    pub g: Option<f64>,
}

/// Predictors, outcome and the centered copy used for the prior scale.
#[derive(Debug, Clone)]
pub struct BmaData<'a> {
    pub x: &'a DMatrix<f64>,
    pub y: &'a DVector<f64>,
    xc: DMatrix<f64>,
}

impl<'a> BmaData<'a> {
    pub fn new(x: &'a DMatrix<f64>, y: &'a DVector<f64>) -> Self {
        let mut xc = x.clone();
        for mut c in xc.column_iter_mut() {
            let m = c.mean();
            c.add_scalar_mut(-m);
        }
        BmaData { x, y, xc }
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }
}

/// Per-model quantities shared by every g.
struct ModelCtx {
    design: DMatrix<f64>,
    scale: DMatrix<f64>,
    log_det_scale: f64,
    k: usize,
}

impl ModelCtx {
    fn new(data: &BmaData, m: &ModelId) -> Result<Self, BmaError> {
        let idx = m.indices();
        let k = idx.len();
        let design = with_intercept(&data.x.select_columns(idx));
        let xc = data.xc.select_columns(idx);
        let scale = xc.transpose() * &xc / 4.0;
        let log_det_scale = if k == 0 {
            0.0
        } else {
            let chol = checked_cholesky(scale.clone()).map_err(|_| BmaError::RankDeficient)?;
            log_det_chol(&chol)
        };
        Ok(ModelCtx { design, scale, log_det_scale, k })
    }

    fn penalty(&self, g: f64) -> DMatrix<f64> {
        let mut q = DMatrix::zeros(self.k + 1, self.k + 1);
        q.view_mut((1, 1), (self.k, self.k)).copy_from(&(&self.scale / g));
        q
    }

    /// Laplace log marginal at fixed `g` with the mode fit.
    fn laplace(&self, y: &DVector<f64>, g: f64, init: Option<&DVector<f64>>) -> Result<(f64, NewtonFit), BmaError> {
        let q = self.penalty(g);
        let fit = newton_fit(&self.design, y, Some(&q), init, LAPLACE_MAX_ITER, None)
            .map_err(|_| BmaError::ModeNotFound)?;
        if !fit.converged {
            return Err(BmaError::ModeNotFound);
        }
        let chol = checked_cholesky(fit.neg_hessian.clone()).map_err(|_| BmaError::ModeNotFound)?;
        let kf = self.k as f64;
        let log_m = fit.objective - 0.5 * kf * g.ln() + 0.5 * self.log_det_scale
            + 0.5 * (2.0 * PI).ln()
            - 0.5 * log_det_chol(&chol);
        Ok((log_m, fit))
    }

    fn laplace_fit(&self, y: &DVector<f64>, g: f64, init: Option<&DVector<f64>>) -> Result<ModelFit, BmaError> {
        let (log_m, fit) = self.laplace(y, g, init)?;
        Ok(ModelFit {
            log_marginal: log_m,
            cov: inverse_spd(&fit.neg_hessian)?,
            mode: fit.beta,
            g: Some(g),
        })
    }

    fn mle_fit(&self, y: &DVector<f64>) -> Result<(f64, ModelFit), BmaError> {
        let ybar = y.mean().clamp(1e-6, 1.0 - 1e-6);
        let mut init = DVector::zeros(self.k + 1);
        init[0] = (ybar / (1.0 - ybar)).ln();
        let fit = newton_fit(&self.design, y, None, Some(&init), MLE_MAX_ITER, Some(DIVERGENCE_GUARD))
            .map_err(|_| BmaError::ModeNotFound)?;
        if !fit.converged {
            return Err(BmaError::ModeNotFound);
        }
        Ok((
            fit.loglik,
            ModelFit {
                log_marginal: fit.loglik,
                cov: inverse_spd(&fit.neg_hessian)?,
                mode: fit.beta,
                g: None,
            },
        ))
    }
}

fn inverse_spd(m: &DMatrix<f64>) -> Result<DMatrix<f64>, BmaError> {
    Ok(checked_cholesky(m.clone()).map_err(|_| BmaError::ModeNotFound)?.inverse())
}

/// First and second moments carried through the g quadrature.
#[derive(Debug, Clone)]
struct Moments {
    mean: DVector<f64>,
    second: DMatrix<f64>,
}

impl Mergeable for Moments {
    fn merge(&self, w_self: f64, other: &Self, w_other: f64) -> Self {
        Moments {
            mean: &self.mean * w_self + &other.mean * w_other,
            second: &self.second * w_self + &other.second * w_other,
        }
    }
}

fn mixture_fit(ctx: &ModelCtx, y: &DVector<f64>, density: &MixtureDensity, n: usize) -> Result<ModelFit, BmaError> {
    if ctx.k == 0 {
        // the marginal does not depend on g and the density integrates to one
        let mut fit = ctx.laplace_fit(y, 1.0, None)?;
        fit.g = None;
        return Ok(fit);
    }
    let q = ctx.k + 1;
    let lo = density.lower_bound(n, ctx.k);
    let u_lo = lo / (1.0 + lo);
    let mut last: Option<DVector<f64>> = None;
    let node = |u: f64| -> (f64, Moments) {
        let empty = || Moments {
            mean: DVector::zeros(q),
            second: DMatrix::zeros(q, q),
        };
        if !(u > 0.0 && u < 1.0) {
            return (f64::NEG_INFINITY, empty());
        }
        let g = u / (1.0 - u);
        let lp = density.log_density(g, n, ctx.k);
        if !lp.is_finite() {
            return (f64::NEG_INFINITY, empty());
        }
        match ctx.laplace(y, g, last.as_ref()) {
            Ok((log_m, fit)) => match inverse_spd(&fit.neg_hessian) {
                Ok(cov) => {
                    let second = cov + &fit.beta * fit.beta.transpose();
                    last = Some(fit.beta.clone());
                    let lv = log_m + lp - 2.0 * (1.0 - u).ln();
                    (lv, Moments { mean: fit.beta, second })
                }
                Err(_) => (f64::NEG_INFINITY, empty()),
            },
            Err(_) => (f64::NEG_INFINITY, empty()),
        }
    };
    let (log_m, mom) = adaptive_log_quad(node, u_lo, 1.0, QUAD_ORDER, QUAD_PANELS, QUAD_REL_TOL, QUAD_MAX_DEPTH)
        .ok_or(BmaError::ModeNotFound)?;
    let cov = &mom.second - &mom.mean * mom.mean.transpose();
    Ok(ModelFit {
        log_marginal: log_m,
        mode: mom.mean,
        cov: (&cov + cov.transpose()) / 2.0,
        g: None,
    })
}

fn eb_local_fit(ctx: &ModelCtx, y: &DVector<f64>) -> Result<ModelFit, BmaError> {
    let mut last: Option<DVector<f64>> = None;
    let (s, _) = grid_then_golden(
        |s| match ctx.laplace(y, s.exp(), last.as_ref()) {
            Ok((v, fit)) => {
                last = Some(fit.beta);
                v
            }
            Err(_) => f64::NEG_INFINITY,
        },
        LOG_G_MIN,
        LOG_G_MAX,
        EB_GRID,
        EB_TOL,
    );
    ctx.laplace_fit(y, s.exp(), last.as_ref())
}

/// Log marginal likelihood of model `m` with its Laplace Gaussian.
///
/// [`GPriorSpec::EbGlobal`] needs the whole model space; use
/// [`eb_global_fit`] first and evaluate at the returned g.
pub fn log_marginal(data: &BmaData, m: &ModelId, prior: &GPriorSpec) -> Result<ModelFit, BmaError> {
    prior.validate()?;
    let ctx = ModelCtx::new(data, m)?;
    let n = data.n();
    match prior {
        GPriorSpec::FixedG { g } => ctx.laplace_fit(data.y, *g, None),
        GPriorSpec::Bic => {
            let (ll, mut fit) = ctx.mle_fit(data.y)?;
            fit.log_marginal = ll - 0.5 * (ctx.k as f64 + 1.0) * (n as f64).ln();
            Ok(fit)
        }
        GPriorSpec::Aic => {
            let (ll, mut fit) = ctx.mle_fit(data.y)?;
            fit.log_marginal = ll - (ctx.k as f64 + 1.0);
            Ok(fit)
        }
        GPriorSpec::Mixture { density } => mixture_fit(&ctx, data.y, density, n),
        GPriorSpec::EbLocal => eb_local_fit(&ctx, data.y),
        GPriorSpec::EbGlobal => Err(BmaError::InvalidPrior(
            "a shared g needs the enumerated model space".into(),
        )),
    }
}

/// All admissible models for enumeration (finite prior), in mask order.
pub fn admissible_models(p: usize, n: usize) -> Vec<ModelId> {
    (0..1u64 << p)
        .map(|mask| ModelId::from_mask(mask, p))
        .filter(|m| model_log_prior(m.size(), p, n).is_finite())
        .collect()
}

/// The objective `log sum_m prior(m) marginal_g(m)` evaluated on a search
/// over `log g`; returns the maximizing g. Grid ties go to the smaller g.
pub fn eb_global_fit(data: &BmaData, models: &[ModelId]) -> Result<f64, BmaError> {
    if data.p() > ENUMERATION_THRESHOLD {
        return Err(BmaError::EnumerationRequired {
            p: data.p(),
            threshold: ENUMERATION_THRESHOLD,
        });
    }
    let (n, p) = (data.n(), data.p());
    let ctxs: Vec<(f64, ModelCtx)> = models
        .iter()
        .filter_map(|m| {
            let lp = model_log_prior(m.size(), p, n);
            let ctx = ModelCtx::new(data, m).ok()?;
            lp.is_finite().then_some((lp, ctx))
        })
        .collect();
    if ctxs.is_empty() {
        return Err(BmaError::AllModelsFailed);
    }
    let mut warm: Vec<Option<DVector<f64>>> = vec![None; ctxs.len()];
    let (s, v) = grid_then_golden(
        |s| eb_global_objective(&ctxs, data.y, s.exp(), &mut warm),
        LOG_G_MIN,
        LOG_G_MAX,
        EB_GRID,
        EB_TOL,
    );
    if !v.is_finite() {
        return Err(BmaError::AllModelsFailed);
    }
    Ok(s.exp())
}

fn eb_global_objective(
    ctxs: &[(f64, ModelCtx)],
    y: &DVector<f64>,
    g: f64,
    warm: &mut [Option<DVector<f64>>],
) -> f64 {
    let terms: Vec<(f64, Option<DVector<f64>>)> = ctxs
        .par_iter()
        .zip(warm.par_iter())
        .map(|((lp, ctx), init)| match ctx.laplace(y, g, init.as_ref()) {
            Ok((v, fit)) => (lp + v, Some(fit.beta)),
            Err(_) => (f64::NEG_INFINITY, None),
        })
        .collect();
    let mut vals = Vec::with_capacity(terms.len());
    for (slot, (v, beta)) in warm.iter_mut().zip(terms) {
        if beta.is_some() {
            *slot = beta;
        }
        vals.push(v);
    }
    log_sum_exp(vals)
}

/// Log of `sum_m prior(m) marginal_g(m)` at a given g (for checks).
pub fn eb_global_objective_at(data: &BmaData, models: &[ModelId], g: f64) -> f64 {
    let (n, p) = (data.n(), data.p());
    let ctxs: Vec<(f64, ModelCtx)> = models
        .iter()
        .filter_map(|m| {
            let lp = model_log_prior(m.size(), p, n);
            Some((lp, ModelCtx::new(data, m).ok()?))
        })
        .collect();
    let mut warm = vec![None; ctxs.len()];
    eb_global_objective(&ctxs, data.y, g, &mut warm)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorModel {
    pub model: ModelId,
    pub log_post: f64,
    /// Probability renormalized over the retained models.
    pub prob: f64,
    pub fit: ModelFit,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BmaPosterior {
    pub p: usize,
    /// Retained models, most probable first.
    pub models: Vec<PosteriorModel>,
    /// Inclusion probabilities over every evaluated model.
    pub inclusion_probs: Vec<f64>,
    /// Number of distinct models evaluated.
    pub n_visited: usize,
    /// Shared g under empirical Bayes over the model space.
    pub shared_g: Option<f64>,
}

impl BmaPosterior {
    /// Model-averaged coefficients, intercept first, zeros where excluded.
    pub fn avg_beta(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.p + 1];
        for pm in &self.models {
            out[0] += pm.prob * pm.fit.mode[0];
            for (l, &j) in pm.model.indices().iter().enumerate() {
                out[j + 1] += pm.prob * pm.fit.mode[l + 1];
            }
        }
        out
    }

    /// Model-averaged predicted probabilities at each model's mode.
    pub fn predict(&self, x: &DMatrix<f64>) -> Vec<f64> {
        let mut out = vec![0.0; x.nrows()];
        for pm in &self.models {
            let xm = x.select_columns(pm.model.indices());
            for (o, v) in out.iter_mut().zip(predict_probs(&pm.fit.mode, &xm)) {
                *o += pm.prob * v;
            }
        }
        out
    }

    pub fn model_prob(&self, m: &ModelId) -> Option<f64> {
        self.models.iter().find(|pm| &pm.model == m).map(|pm| pm.prob)
    }
}

/// Builds the posterior from `(model, log posterior)` pairs over the
/// evaluated space. `fit_of` supplies fits for the retained models.
fn assemble<F>(p: usize, scored: Vec<(ModelId, f64)>, shared_g: Option<f64>, fit_of: F) -> Result<BmaPosterior, BmaError>
where
    F: Fn(&ModelId) -> Option<ModelFit> + Sync,
{
    let finite: Vec<(ModelId, f64)> = scored.into_iter().filter(|(_, v)| v.is_finite()).collect();
    if finite.is_empty() {
        return Err(BmaError::AllModelsFailed);
    }
    let n_visited = finite.len();
    let lz = log_sum_exp(finite.iter().map(|(_, v)| *v));
    let mut inclusion = vec![0.0; p];
    for (m, v) in &finite {
        let w = (v - lz).exp();
        for &j in m.indices() {
            inclusion[j] += w;
        }
    }
    for v in inclusion.iter_mut() {
        *v = v.clamp(0.0, 1.0);
    }

    let mut order = finite;
    order.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    let best = order[0].1;
    order.retain(|(_, v)| *v >= best - RETAIN_GAP);
    order.truncate(MAX_RETAINED);
    let fits: Vec<Option<ModelFit>> = order.par_iter().map(|(m, _)| fit_of(m)).collect();
    let kept: Vec<(ModelId, f64, ModelFit)> = order
        .into_iter()
        .zip(fits)
        .filter_map(|((m, v), f)| f.map(|f| (m, v, f)))
        .collect();
    if kept.is_empty() {
        return Err(BmaError::AllModelsFailed);
    }
    let lk = log_sum_exp(kept.iter().map(|(_, v, _)| *v));
    let models = kept
        .into_iter()
        .map(|(model, log_post, fit)| PosteriorModel {
            prob: (log_post - lk).exp(),
            model,
            log_post,
            fit,
        })
        .collect();
    Ok(BmaPosterior {
        p,
        models,
        inclusion_probs: inclusion,
        n_visited,
        shared_g,
    })
}

fn warn_excluded(m: &ModelId, e: &BmaError) {
    warn!("model {:?} excluded: {e}", m.indices());
}

/// Exhaustive posterior over all admissible models.
pub fn enumerate_posterior(data: &BmaData, prior: &GPriorSpec) -> Result<BmaPosterior, BmaError> {
    prior.validate()?;
    let (n, p) = (data.n(), data.p());
    if p > ENUMERATION_THRESHOLD {
        return Err(BmaError::EnumerationRequired {
            p,
            threshold: ENUMERATION_THRESHOLD,
        });
    }
    let models = admissible_models(p, n);
    let (prior, shared_g) = match prior {
        GPriorSpec::EbGlobal => {
            let g = eb_global_fit(data, &models)?;
            (GPriorSpec::FixedG { g }, Some(g))
        }
        other => (*other, None),
    };
    let evaluate = |m: &ModelId| -> Option<ModelFit> {
        match log_marginal(data, m, &prior) {
            Ok(f) => Some(f),
            Err(e) => {
                warn_excluded(m, &e);
                None
            }
        }
    };
    let store = p <= STORE_ALL_FITS_MAX_P;
    let results: Vec<(ModelId, f64, Option<ModelFit>)> = models
        .into_par_iter()
        .map(|m| {
            let lp = model_log_prior(m.size(), p, n);
            match evaluate(&m) {
                Some(f) => {
                    let v = lp + f.log_marginal;
                    (m, v, store.then_some(f))
                }
                None => (m, f64::NEG_INFINITY, None),
            }
        })
        .collect();
    let scored: Vec<(ModelId, f64)> = results.iter().map(|(m, v, _)| (m.clone(), *v)).collect();
    if store {
        let cache: HashMap<ModelId, ModelFit> = results
            .into_iter()
            .filter_map(|(m, _, f)| f.map(|f| (m, f)))
            .collect();
        assemble(p, scored, shared_g, |m| cache.get(m).cloned())
    } else {
        drop(results);
        assemble(p, scored, shared_g, |m| log_marginal(data, m, &prior).ok())
    }
}

/// Metropolis random walk over models with single-predictor flips.
///
/// The posterior is renormalized over every distinct model evaluated by the
/// chain, accepted or not.
pub fn mc3_posterior(data: &BmaData, prior: &GPriorSpec, iterations: usize, seed: u64) -> Result<BmaPosterior, BmaError> {
    prior.validate()?;
    if iterations < 1000 {
        return Err(BmaError::TooFewIterations(iterations));
    }
    if matches!(prior, GPriorSpec::EbGlobal) {
        return Err(BmaError::EnumerationRequired {
            p: data.p(),
            threshold: ENUMERATION_THRESHOLD,
        });
    }
    let (n, p) = (data.n(), data.p());
    let mut cache: HashMap<ModelId, (f64, Option<ModelFit>)> = HashMap::new();
    let score = |m: &ModelId, cache: &mut HashMap<ModelId, (f64, Option<ModelFit>)>| -> f64 {
        if let Some((v, _)) = cache.get(m) {
            return *v;
        }
        let lp = model_log_prior(m.size(), p, n);
        let entry = if lp.is_finite() {
            match log_marginal(data, m, prior) {
                Ok(f) => (lp + f.log_marginal, Some(f)),
                Err(e) => {
                    warn_excluded(m, &e);
                    (f64::NEG_INFINITY, None)
                }
            }
        } else {
            (f64::NEG_INFINITY, None)
        };
        let v = entry.0;
        cache.insert(m.clone(), entry);
        v
    };

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut current = ModelId::empty();
    let mut cur_v = score(&current, &mut cache);
    if p > 0 {
        for _ in 0..iterations {
            let j = rng.random_range(0..p);
            let prop = current.toggled(j);
            let v = score(&prop, &mut cache);
            let u: f64 = rng.random();
            let accept = v.is_finite() && (cur_v == f64::NEG_INFINITY || u.ln() < v - cur_v);
            if accept {
                current = prop;
                cur_v = v;
            }
        }
    }
    let scored: Vec<(ModelId, f64)> = {
        let mut s: Vec<(ModelId, f64)> = cache.iter().map(|(m, (v, _))| (m.clone(), *v)).collect();
        s.sort_by(|a, b| a.0.cmp(&b.0));
        s
    };
    assemble(p, scored, None, |m| cache.get(m).and_then(|(_, f)| f.clone()))
}

/// Posterior summaries: averaged coefficients and equal-tailed 95% bounds
/// from mixture draws.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BmaSummary {
    pub avg_beta: Vec<f64>,
    pub ci_lower: Vec<f64>,
    pub ci_upper: Vec<f64>,
    pub inclusion_probs: Vec<f64>,
}

/// Lower triangular factor of a covariance, falling back to the diagonal
/// when the matrix is not numerically positive definite.
fn cov_factor(cov: &DMatrix<f64>) -> DMatrix<f64> {
    match cov.clone().cholesky() {
        Some(c) => c.l(),
        None => DMatrix::from_diagonal(&cov.diagonal().map(|v| v.max(0.0).sqrt())),
    }
}

/// Type-7 sample quantile of sorted data.
pub(crate) fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn summarize_bma(post: &BmaPosterior, draws: usize, seed: u64) -> BmaSummary {
    let avg_beta = post.avg_beta();
    let q = post.p + 1;
    let draws = draws.max(1);
    // coordinate -> slot among coordinates that appear in some model
    let mut slot = vec![usize::MAX; q];
    let mut touched = vec![0usize];
    slot[0] = 0;
    for pm in &post.models {
        for &j in pm.model.indices() {
            if slot[j + 1] == usize::MAX {
                slot[j + 1] = touched.len();
                touched.push(j + 1);
            }
        }
    }
    let factors: Vec<DMatrix<f64>> = post.models.iter().map(|pm| cov_factor(&pm.fit.cov)).collect();
    let mut cum = Vec::with_capacity(post.models.len());
    let mut acc = 0.0;
    for pm in &post.models {
        acc += pm.prob;
        cum.push(acc);
    }
    let mut samples = vec![vec![0.0; draws]; touched.len()];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for d in 0..draws {
        let u: f64 = rng.random::<f64>() * acc;
        let mi = cum.partition_point(|&c| c < u).min(post.models.len() - 1);
        let pm = &post.models[mi];
        let z = DVector::from_fn(pm.fit.mode.len(), |_, _| rng.sample::<f64, _>(StandardNormal));
        let beta = &pm.fit.mode + &factors[mi] * z;
        samples[0][d] = beta[0];
        for (l, &j) in pm.model.indices().iter().enumerate() {
            samples[slot[j + 1]][d] = beta[l + 1];
        }
    }
    let mut ci_lower = vec![0.0; q];
    let mut ci_upper = vec![0.0; q];
    for (s, col) in samples.iter_mut().enumerate() {
        col.sort_by(f64::total_cmp);
        let c = touched[s];
        ci_lower[c] = quantile_sorted(col, 0.025);
        ci_upper[c] = quantile_sorted(col, 0.975);
    }
    BmaSummary {
        avg_beta,
        ci_lower,
        ci_upper,
        inclusion_probs: post.inclusion_probs.clone(),
    }
}

/// Enumerates when `p` allows it, otherwise runs MC3.
pub fn fit_posterior(data: &BmaData, prior: &GPriorSpec, seed: u64) -> Result<BmaPosterior, BmaError> {
    if data.p() <= ENUMERATION_THRESHOLD {
        enumerate_posterior(data, prior)
    } else {
        mc3_posterior(data, prior, MC3_ITERATIONS, seed)
    }
}
