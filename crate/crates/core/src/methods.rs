//! The catalog of selection and estimation methods run by the harness, with
//! a common fit interface.

use std::collections::BTreeMap;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::bma::{
    enumerate_posterior, mc3_posterior, summarize_bma, BmaData, BmaPosterior, GPriorSpec, MixtureDensity,
    DEFAULT_DRAWS, MC3_ITERATIONS,
};
use crate::glm::{fit_firth, predict_probs};
use crate::penalized::{cv_select_lambda, PenaltySpec, Standardizer, DEFAULT_CV_FOLDS, DEFAULT_PATH_LEN};
use crate::selection::{pvalue_select, stepwise_select, Direction, SelectionFit, StepwiseConfig};

/// MCP concavity used by the catalog.
pub const MCP_GAMMA: f64 = 3.0;
/// SCAD concavity used by the catalog.
pub const SCAD_GAMMA: f64 = 3.7;
/// Mixing weight of the elastic net entry.
pub const ELASTIC_NET_ALPHA: f64 = 0.5;
/// Per-parameter penalty of the stepwise entries.
pub const STEPWISE_PENALTY: f64 = 2.0;

/// Everything a method sees for one fit.
#[derive(Debug, Clone)]
pub struct FitInput {
    pub x: DMatrix<f64>,
    pub y: DVector<f64>,
    pub seed: u64,
    pub enumeration_threshold: usize,
    /// False for held-out fold fits, where only predictions are needed.
    pub summaries: bool,
}

/// How a fitted method predicts.
#[derive(Debug, Clone)]
pub enum Predictor {
    /// Intercept-first coefficients on the original columns.
    Linear(Vec<f64>),
    Averaged(Box<BmaPosterior>),
}

impl Predictor {
    pub fn predict(&self, x: &DMatrix<f64>) -> Vec<f64> {
        match self {
            Predictor::Linear(b) => predict_probs(&DVector::from_column_slice(b), x),
            Predictor::Averaged(post) => post.predict(x),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Fitted {
    /// Length `p + 1`, intercept first.
    pub beta: Vec<f64>,
    pub ci: Option<(Vec<f64>, Vec<f64>)>,
    pub inclusion: Vec<f64>,
    pub predictor: Predictor,
}

pub type FitFn = Arc<dyn Fn(&FitInput) -> Result<Fitted, String> + Send + Sync>;

/// A named method with its fit function.
#[derive(Clone)]
pub struct MethodEntry {
    pub name: String,
    /// Hard selection methods report `[0, 0]` intervals for excluded slopes.
    pub hard_selection: bool,
    pub fit: FitFn,
}

impl std::fmt::Debug for MethodEntry {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("MethodEntry")
            .field("name", &self.name)
            .field("hard_selection", &self.hard_selection)
            .finish()
    }
}

fn from_selection(sel: SelectionFit) -> Fitted {
    Fitted {
        predictor: Predictor::Linear(sel.beta.clone()),
        beta: sel.beta,
        ci: Some((sel.ci_lower, sel.ci_upper)),
        inclusion: sel.inclusion_score,
    }
}

fn pvalue_method(threshold: f64) -> FitFn {
    Arc::new(move |inp: &FitInput| {
        pvalue_select(&inp.x, &inp.y, threshold)
            .map(from_selection)
            .map_err(|e| e.to_string())
    })
}

fn stepwise_method(direction: Direction) -> FitFn {
    Arc::new(move |inp: &FitInput| {
        stepwise_select(&inp.x, &inp.y, &StepwiseConfig::new(direction, STEPWISE_PENALTY))
            .map(from_selection)
            .map_err(|e| e.to_string())
    })
}

fn penalized_method(spec: PenaltySpec) -> FitFn {
    Arc::new(move |inp: &FitInput| {
        let st = Standardizer::fit(&inp.x);
        let xs = st.transform(&inp.x);
        let path = cv_select_lambda(&xs, &inp.y, &spec, DEFAULT_CV_FOLDS, inp.seed, DEFAULT_PATH_LEN)
            .map_err(|e| e.to_string())?;
        let coef = path.selected_coefficients();
        let std_slopes: Vec<f64> = coef.iter().skip(1).copied().collect();
        let beta = st.to_original(coef[0], &std_slopes);
        Ok(Fitted {
            predictor: Predictor::Linear(beta.clone()),
            beta,
            ci: None,
            inclusion: std_slopes.iter().map(|b| b.abs()).collect(),
        })
    })
}

fn firth_method() -> FitFn {
    Arc::new(|inp: &FitInput| {
        let fit = fit_firth(&inp.x, &inp.y, true).map_err(|e| e.to_string())?;
        let (lo, hi) = fit.wald_intervals(0.95);
        Ok(Fitted {
            predictor: Predictor::Linear(fit.beta.clone()),
            inclusion: fit.slope_pvalues().iter().map(|p| 1.0 - p).collect(),
            beta: fit.beta,
            ci: Some((lo, hi)),
        })
    })
}

/// g-prior choices that depend on the training data's shape.
#[derive(Debug, Clone, Copy)]
enum BmaPrior {
    Fixed(f64),
    SqrtN,
    Benchmark,
    Spec(GPriorSpec),
}

fn bma_method(prior: BmaPrior) -> FitFn {
    Arc::new(move |inp: &FitInput| {
        let (n, p) = (inp.x.nrows() as f64, inp.x.ncols() as f64);
        let spec = match prior {
            BmaPrior::Fixed(g) => GPriorSpec::FixedG { g },
            BmaPrior::SqrtN => GPriorSpec::FixedG { g: n.sqrt() },
            BmaPrior::Benchmark => GPriorSpec::FixedG { g: n.max(p * p) },
            BmaPrior::Spec(s) => s,
        };
        let data = BmaData::new(&inp.x, &inp.y);
        let post = if inp.x.ncols() <= inp.enumeration_threshold {
            enumerate_posterior(&data, &spec)
        } else {
            mc3_posterior(&data, &spec, MC3_ITERATIONS, inp.seed)
        }
        .map_err(|e| e.to_string())?;
        let (beta, ci) = if inp.summaries {
            let s = summarize_bma(&post, DEFAULT_DRAWS, inp.seed);
            (s.avg_beta, Some((s.ci_lower, s.ci_upper)))
        } else {
            (post.avg_beta(), None)
        };
        Ok(Fitted {
            beta,
            ci,
            inclusion: post.inclusion_probs.clone(),
            predictor: Predictor::Averaged(Box::new(post)),
        })
    })
}

/// Names of the built-in methods in catalog order.
pub const CATALOG: [&str; 25] = [
    "pvalue",
    "p05",
    "p005",
    "forward",
    "backward",
    "both",
    "ridge",
    "elastic_net",
    "lasso",
    "mcp",
    "scad",
    "firth",
    "bma_g4",
    "bma_sqrt_n",
    "bma_benchmark",
    "bma_hyper_g",
    "bma_hyper_g_n",
    "bma_beta_prime",
    "bma_cch",
    "bma_robust",
    "bma_intrinsic",
    "bma_eb_local",
    "bma_eb_global",
    "bma_aic",
    "bma_bic",
];

fn builtin(name: &str) -> Option<(bool, FitFn)> {
    let mix = |d| BmaPrior::Spec(GPriorSpec::Mixture { density: d });
    Some(match name {
        "pvalue" => (true, pvalue_method(1.0)),
        "p05" => (true, pvalue_method(0.05)),
        "p005" => (true, pvalue_method(0.005)),
        "forward" => (true, stepwise_method(Direction::Forward)),
        "backward" => (true, stepwise_method(Direction::Backward)),
        "both" => (true, stepwise_method(Direction::Both)),
        "ridge" => (false, penalized_method(PenaltySpec::ridge())),
        "elastic_net" => (false, penalized_method(PenaltySpec::elastic_net())),
        "lasso" => (false, penalized_method(PenaltySpec::lasso())),
        "mcp" => (false, penalized_method(PenaltySpec::mcp(MCP_GAMMA))),
        "scad" => (false, penalized_method(PenaltySpec::scad(SCAD_GAMMA))),
        "firth" => (false, firth_method()),
        "bma_g4" => (false, bma_method(BmaPrior::Fixed(4.0))),
        "bma_sqrt_n" => (false, bma_method(BmaPrior::SqrtN)),
        "bma_benchmark" => (false, bma_method(BmaPrior::Benchmark)),
        "bma_hyper_g" => (false, bma_method(mix(MixtureDensity::hyper_g()))),
        "bma_hyper_g_n" => (false, bma_method(mix(MixtureDensity::hyper_g_over_n()))),
        "bma_beta_prime" => (false, bma_method(mix(MixtureDensity::BetaPrime))),
        "bma_cch" => (false, bma_method(mix(MixtureDensity::cch_default()))),
        "bma_robust" => (false, bma_method(mix(MixtureDensity::Robust))),
        "bma_intrinsic" => (false, bma_method(mix(MixtureDensity::Intrinsic))),
        "bma_eb_local" => (false, bma_method(BmaPrior::Spec(GPriorSpec::EbLocal))),
        "bma_eb_global" => (false, bma_method(BmaPrior::Spec(GPriorSpec::EbGlobal))),
        "bma_aic" => (false, bma_method(BmaPrior::Spec(GPriorSpec::Aic))),
        "bma_bic" => (false, bma_method(BmaPrior::Spec(GPriorSpec::Bic))),
        _ => return None,
    })
}

/// Methods available to a run: the built-in catalog plus any registered
/// extras (useful for stubs in tests).
#[derive(Debug, Clone)]
pub struct MethodRegistry {
    entries: BTreeMap<String, MethodEntry>,
}

impl Default for MethodRegistry {
    fn default() -> Self {
        let entries = CATALOG
            .iter()
            .map(|&name| {
                let (hard_selection, fit) = builtin(name).expect("catalog entry");
                (
                    name.to_string(),
                    MethodEntry {
                        name: name.to_string(),
                        hard_selection,
                        fit,
                    },
                )
            })
            .collect();
        MethodRegistry { entries }
    }
}

impl MethodRegistry {
    pub fn register(&mut self, name: &str, hard_selection: bool, fit: FitFn) {
        self.entries.insert(
            name.to_string(),
            MethodEntry {
                name: name.to_string(),
                hard_selection,
                fit,
            },
        );
    }

    pub fn get(&self, name: &str) -> Option<&MethodEntry> {
        self.entries.get(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }
}
