//! Independent reference implementations used by the integration tests.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal_matrix(r: &mut ChaCha8Rng, n: usize, p: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n, p, |_, _| StandardNormal.sample(r))
}

fn logistic(e: f64) -> f64 {
    1.0 / (1.0 + (-e).exp())
}

/// Bernoulli outcomes from `intercept + x beta`.
pub fn bernoulli_outcome(r: &mut ChaCha8Rng, x: &DMatrix<f64>, intercept: f64, beta: &[f64]) -> DVector<f64> {
    DVector::from_fn(x.nrows(), |i, _| {
        let eta = intercept + (0..beta.len()).map(|j| x[(i, j)] * beta[j]).sum::<f64>();
        if r.random::<f64>() < logistic(eta) {
            1.0
        } else {
            0.0
        }
    })
}

pub fn has_both_classes(y: &DVector<f64>) -> bool {
    let s = y.sum();
    s > 0.5 && s < y.len() as f64 - 0.5
}

/// Log-likelihood written directly from the Bernoulli mass function.
pub fn naive_loglik(design: &DMatrix<f64>, y: &DVector<f64>, b: &[f64]) -> f64 {
    (0..design.nrows())
        .map(|i| {
            let eta: f64 = (0..b.len()).map(|j| design[(i, j)] * b[j]).sum();
            let p = logistic(eta);
            if y[i] > 0.5 {
                p.ln()
            } else {
                (1.0 - p).ln()
            }
        })
        .sum()
}

/// Solves `a x = b` by Gaussian elimination with partial pivoting.
pub fn gauss_solve(a: &[Vec<f64>], b: &[f64]) -> Option<Vec<f64>> {
    let n = b.len();
    let mut m: Vec<Vec<f64>> = a.iter().zip(b).map(|(row, &bi)| {
        let mut r = row.clone();
        r.push(bi);
        r
    }).collect();
    for c in 0..n {
        let piv = (c..n).max_by(|&i, &j| m[i][c].abs().total_cmp(&m[j][c].abs()))?;
        if m[piv][c].abs() < 1e-300 {
            return None;
        }
        m.swap(c, piv);
        for r in c + 1..n {
            let f = m[r][c] / m[c][c];
            for k in c..=n {
                m[r][k] -= f * m[c][k];
            }
        }
    }
    let mut x = vec![0.0; n];
    for c in (0..n).rev() {
        let s: f64 = (c + 1..n).map(|k| m[c][k] * x[k]).sum();
        x[c] = (m[c][n] - s) / m[c][c];
    }
    Some(x)
}

/// Damped Newton maximizer of the log-likelihood using plain vectors and
/// step halving on the objective value. Returns `None` when it fails.
pub fn reference_mle(design: &DMatrix<f64>, y: &DVector<f64>) -> Option<Vec<f64>> {
    let (n, q) = (design.nrows(), design.ncols());
    let mut b = vec![0.0; q];
    let mut f = naive_loglik(design, y, &b);
    for _ in 0..500 {
        let mut grad = vec![0.0; q];
        let mut info = vec![vec![0.0; q]; q];
        for i in 0..n {
            let eta: f64 = (0..q).map(|j| design[(i, j)] * b[j]).sum();
            let p = logistic(eta);
            for j in 0..q {
                grad[j] += design[(i, j)] * (y[i] - p);
                for k in 0..q {
                    info[j][k] += design[(i, j)] * design[(i, k)] * p * (1.0 - p);
                }
            }
        }
        if grad.iter().map(|g| g * g).sum::<f64>().sqrt() < 1e-11 {
            return Some(b);
        }
        let step = gauss_solve(&info, &grad)?;
        let mut t = 1.0;
        loop {
            let cand: Vec<f64> = b.iter().zip(&step).map(|(a, s)| a + t * s).collect();
            let fc = naive_loglik(design, y, &cand);
            if fc >= f - 1e-12 {
                b = cand;
                f = fc;
                break;
            }
            t /= 2.0;
            if t < 1e-12 {
                return Some(b);
            }
        }
        if b.iter().any(|v| v.abs() > 50.0) {
            return None;
        }
    }
    None
}

/// Verdict of the brute-force separation oracle.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    None,
    Quasi,
    Complete,
}

fn rank(m: &DMatrix<f64>) -> usize {
    if m.nrows() == 0 {
        return 0;
    }
    m.clone().svd(false, false).rank(1e-9)
}

/// Orthonormal basis of the null space of `m` (columns), `d` columns wide.
fn null_space(m: &DMatrix<f64>, d: usize) -> DMatrix<f64> {
    if m.nrows() == 0 {
        return DMatrix::identity(d, d);
    }
    let mut padded = DMatrix::zeros(m.nrows().max(d), d);
    padded.view_mut((0, 0), (m.nrows(), d)).copy_from(m);
    let svd = padded.svd(false, true);
    let vt = svd.v_t.unwrap();
    let cols: Vec<usize> = (0..d).filter(|&i| svd.singular_values[i] <= 1e-9).collect();
    DMatrix::from_fn(d, cols.len(), |r, c| vt[(cols[c], r)])
}

/// Separation by enumerating candidate extreme rays of the cone
/// `{b : A b >= 0}` modulo its lineality space, where the rows of `A` are
/// the design rows signed by the outcome. With `r = rank(A)` every extreme
/// ray is pinned by `r - 1` independent tight rows, so all such subsets are
/// tried. Cost is combinatorial; meant for a handful of rows.
pub fn brute_force_separation(design: &DMatrix<f64>, y: &DVector<f64>) -> Verdict {
    let (n, d) = (design.nrows(), design.ncols());
    let a = DMatrix::from_fn(n, d, |i, j| if y[i] > 0.5 { design[(i, j)] } else { -design[(i, j)] });
    let r = rank(&a);
    let lineality = null_space(&a, d);
    let mut rays: Vec<DVector<f64>> = Vec::new();
    let mut subset: Vec<usize> = Vec::new();
    fn recurse(
        start: usize,
        need: usize,
        subset: &mut Vec<usize>,
        a: &DMatrix<f64>,
        d: usize,
        lineality: &DMatrix<f64>,
        rays: &mut Vec<DVector<f64>>,
    ) {
        if subset.len() == need {
            let rows = a.select_rows(subset.iter());
            if rank(&rows) != need {
                return;
            }
            let ns = null_space(&rows, d);
            // remove lineality directions and keep what is left
            let mut v = None;
            for c in 0..ns.ncols() {
                let mut col = ns.column(c).into_owned();
                for l in 0..lineality.ncols() {
                    let lc = lineality.column(l);
                    col -= lc * lc.dot(&col);
                }
                if col.norm() > 1e-7 {
                    v = Some(col.normalize());
                    break;
                }
            }
            let Some(v) = v else { return };
            for s in [1.0, -1.0] {
                let cand = &v * s;
                let m = a * &cand;
                if m.iter().all(|&t| t >= -1e-9) && m.iter().any(|&t| t > 1e-9) {
                    rays.push(cand);
                }
            }
            return;
        }
        for i in start..a.nrows() {
            subset.push(i);
            recurse(i + 1, need, subset, a, d, lineality, rays);
            subset.pop();
        }
    }
    if r == 0 {
        return Verdict::None;
    }
    recurse(0, r - 1, &mut subset, &a, d, &lineality, &mut rays);
    if rays.is_empty() {
        return Verdict::None;
    }
    let sum = rays.iter().fold(DVector::zeros(d), |acc, v| acc + v);
    if (&a * &sum).iter().all(|&t| t > 1e-9) {
        Verdict::Complete
    } else {
        Verdict::Quasi
    }
}

/// Firth-penalized log-likelihood for a single coefficient without intercept.
pub fn firth_objective_1d(x: &[f64], y: &[f64], b: f64) -> f64 {
    let mut ll = 0.0;
    let mut info = 0.0;
    for (&xi, &yi) in x.iter().zip(y) {
        let p = logistic(xi * b);
        ll += if yi > 0.5 { p.ln() } else { (1.0 - p).ln() };
        info += xi * xi * p * (1.0 - p);
    }
    ll + 0.5 * info.ln()
}

/// Grid maximization with successive refinement.
pub fn grid_argmax(f: impl Fn(f64) -> f64, lo: f64, hi: f64) -> f64 {
    let (mut lo, mut hi) = (lo, hi);
    let mut best = lo;
    for _ in 0..8 {
        let steps = 400;
        let h = (hi - lo) / steps as f64;
        let mut bv = f64::NEG_INFINITY;
        for k in 0..=steps {
            let t = lo + h * k as f64;
            let v = f(t);
            if v > bv {
                bv = v;
                best = t;
            }
        }
        lo = best - 2.0 * h;
        hi = best + 2.0 * h;
    }
    best
}

/// Upper-tail sign test: probability of at least `wins` successes out of
/// `trials` fair coin flips.
pub fn sign_test_pvalue(wins: usize, trials: usize) -> f64 {
    let ln_choose = |n: usize, k: usize| -> f64 {
        (1..=k).map(|i| ((n - k + i) as f64).ln() - (i as f64).ln()).sum()
    };
    (wins..=trials)
        .map(|k| (ln_choose(trials, k) - trials as f64 * std::f64::consts::LN_2).exp())
        .sum()
}
