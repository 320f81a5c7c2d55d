//! Small numerical helpers: log-sum-exp, Gauss-Legendre rules, adaptive
//! quadrature in log space, and golden-section search.

use std::f64::consts::PI;

pub fn log_sum_exp(values: impl IntoIterator<Item = f64>) -> f64 {
    let v: Vec<f64> = values.into_iter().collect();
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY || m.is_nan() {
        return m;
    }
    if m == f64::INFINITY {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

pub fn log_add_exp(a: f64, b: f64) -> f64 {
    let m = a.max(b);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// Nodes and weights of the n-point Gauss-Legendre rule on [-1, 1].
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        let mut z = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p1, mut p2) = (1.0, 0.0);
            for j in 0..n {
                let p3 = p2;
                p2 = p1;
                p1 = ((2 * j + 1) as f64 * z * p2 - j as f64 * p3) / (j + 1) as f64;
            }
            dp = n as f64 * (z * p1 - p2) / (z * z - 1.0);
            let dz = p1 / dp;
            z -= dz;
            if dz.abs() < 1e-15 {
                break;
            }
        }
        nodes[i] = -z;
        nodes[n - 1 - i] = z;
        let w = 2.0 / ((1.0 - z * z) * dp * dp);
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

/// One panel of a log-space quadrature: log of the integral over the panel
/// plus a payload aggregated with the same weights.
#[derive(Debug, Clone)]
pub struct Panel<T> {
    pub a: f64,
    pub b: f64,
    pub log_value: f64,
    pub payload: T,
}

/// Payload that can be merged with log-weights (weighted averages).
pub trait Mergeable: Clone {
    fn merge(&self, w_self: f64, other: &Self, w_other: f64) -> Self;
}

impl Mergeable for () {
    fn merge(&self, _: f64, _: &Self, _: f64) -> Self {}
}

/// Adaptive Gauss-Legendre in log space.
///
/// `f(t)` returns `(log integrand, payload)`. The interval starts as
/// `init_panels` equal panels of `order` nodes each, and a panel is split
/// while the split changes its contribution by more than `rel_tol` of the
/// running total. Returns the log integral and the payload averaged with
/// the integrand weights.
pub fn adaptive_log_quad<T: Mergeable, F: FnMut(f64) -> (f64, T)>(
    mut f: F,
    a: f64,
    b: f64,
    order: usize,
    init_panels: usize,
    rel_tol: f64,
    max_depth: usize,
) -> Option<(f64, T)> {
    let (x, w) = gauss_legendre(order);
    let mut eval_panel = |lo: f64, hi: f64| -> Option<Panel<T>> {
        let half = 0.5 * (hi - lo);
        let mid = 0.5 * (hi + lo);
        let mut acc: Option<(f64, T)> = None;
        for k in 0..order {
            let t = mid + half * x[k];
            let (lv, payload) = f(t);
            if !lv.is_finite() {
                continue;
            }
            let lw = lv + (w[k] * half).ln();
            acc = Some(match acc {
                None => (lw, payload),
                Some((l0, p0)) => {
                    let lt = log_add_exp(l0, lw);
                    let merged = p0.merge((l0 - lt).exp(), &payload, (lw - lt).exp());
                    (lt, merged)
                }
            });
        }
        acc.map(|(log_value, payload)| Panel {
            a: lo,
            b: hi,
            log_value,
            payload,
        })
    };

    let width = (b - a) / init_panels as f64;
    let mut stack: Vec<(Panel<T>, usize)> = Vec::new();
    for i in 0..init_panels {
        let lo = a + width * i as f64;
        if let Some(p) = eval_panel(lo, lo + width) {
            stack.push((p, 0));
        }
    }
    if stack.is_empty() {
        return None;
    }
    let log_total0 = log_sum_exp(stack.iter().map(|(p, _)| p.log_value));

    let mut done: Vec<Panel<T>> = Vec::new();
    while let Some((panel, depth)) = stack.pop() {
        let mid = 0.5 * (panel.a + panel.b);
        let left = eval_panel(panel.a, mid);
        let right = eval_panel(mid, panel.b);
        let split_log = log_sum_exp(
            [left.as_ref(), right.as_ref()]
                .into_iter()
                .flatten()
                .map(|p| p.log_value),
        );
        let diff = ((split_log - log_total0).exp() - (panel.log_value - log_total0).exp()).abs();
        let children: Vec<Panel<T>> = [left, right].into_iter().flatten().collect();
        if diff <= rel_tol || depth >= max_depth {
            if children.is_empty() {
                done.push(panel);
            } else {
                done.extend(children);
            }
        } else {
            for c in children {
                stack.push((c, depth + 1));
            }
        }
    }

    let mut iter = done.into_iter();
    let first = iter.next()?;
    let (mut lt, mut payload) = (first.log_value, first.payload);
    for p in iter {
        let new_lt = log_add_exp(lt, p.log_value);
        payload = payload.merge((lt - new_lt).exp(), &p.payload, (p.log_value - new_lt).exp());
        lt = new_lt;
    }
    Some((lt, payload))
}

/// Maximizes a unimodal `f` on `[lo, hi]`; returns `(argmax, max)`.
pub fn golden_section_max<F: FnMut(f64) -> f64>(mut f: F, mut lo: f64, mut hi: f64, tol: f64) -> (f64, f64) {
    let r = (5.0_f64.sqrt() - 1.0) / 2.0;
    let mut c = hi - r * (hi - lo);
    let mut d = lo + r * (hi - lo);
    let mut fc = f(c);
    let mut fd = f(d);
    while hi - lo > tol {
        // ties move toward the lower end
        if fc >= fd {
            hi = d;
            d = c;
            fd = fc;
            c = hi - r * (hi - lo);
            fc = f(c);
        } else {
            lo = c;
            c = d;
            fc = fd;
            d = lo + r * (hi - lo);
            fd = f(d);
        }
    }
    if fc >= fd {
        (c, fc)
    } else {
        (d, fd)
    }
}

/// Grid scan followed by golden-section refinement around the best grid point.
/// Ties on the grid go to the smaller argument.
pub fn grid_then_golden<F: FnMut(f64) -> f64>(mut f: F, lo: f64, hi: f64, grid: usize, tol: f64) -> (f64, f64) {
    let step = (hi - lo) / (grid - 1) as f64;
    let mut best = (lo, f(lo));
    for k in 1..grid {
        let t = lo + step * k as f64;
        let v = f(t);
        if v > best.1 || (best.1 == f64::NEG_INFINITY && v.is_finite()) {
            best = (t, v);
        }
    }
    if !best.1.is_finite() {
        return best;
    }
    let a = (best.0 - step).max(lo);
    let b = (best.0 + step).min(hi);
    let refined = golden_section_max(&mut f, a, b, tol);
    if refined.1 > best.1 {
        refined
    } else {
        best
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gauss_legendre_integrates_polynomials_exactly() {
        let (x, w) = gauss_legendre(16);
        let integral: f64 = x.iter().zip(&w).map(|(t, wt)| wt * t.powi(30)).sum();
        assert!((integral - 2.0 / 31.0).abs() < 1e-14);
        assert!((w.iter().sum::<f64>() - 2.0).abs() < 1e-14);
    }

    #[test]
    fn adaptive_quadrature_handles_endpoint_singularity() {
        // integral of 0.5 (1-u)^(-1/2) over (0,1) is 1
        let (lv, ()) = adaptive_log_quad(|u| ((0.5f64).ln() - 0.5 * (1.0 - u).ln(), ()), 0.0, 1.0, 16, 4, 1e-10, 40).unwrap();
        assert!(lv.abs() < 1e-6, "{lv}");
    }

    #[test]
    fn golden_section_finds_quadratic_peak() {
        let (x, v) = golden_section_max(|t| -(t - 1.3).powi(2), -5.0, 5.0, 1e-9);
        assert!((x - 1.3).abs() < 1e-6);
        assert!(v.abs() < 1e-10);
    }

    #[test]
    fn lse_matches_direct() {
        let v = [1.0, 2.0, 3.0];
        let direct = v.iter().map(|x: &f64| x.exp()).sum::<f64>().ln();
        assert!((log_sum_exp(v) - direct).abs() < 1e-14);
        assert_eq!(log_sum_exp([f64::NEG_INFINITY; 2]), f64::NEG_INFINITY);
    }
}
