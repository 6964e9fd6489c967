//! Limited-memory BFGS for smooth unconstrained minimization.
//!
//! Two-loop recursion for the search direction and a line search enforcing the
//! strong Wolfe conditions (bracketing then zoom with safeguarded cubic
//! interpolation). Every accepted step satisfies sufficient decrease, so the
//! sequence of accepted objective values is non-increasing.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LbfgsOptions {
    /// Number of correction pairs kept.
    pub memory: usize,
    pub max_iter: usize,
    /// Stop when the max-norm of the gradient falls to this value.
    pub gtol: f64,
    /// Stop when `(f_k - f_{k+1}) / max(|f_k|, |f_{k+1}|, 1)` falls to this value.
    pub ftol: f64,
    pub max_line_search: usize,
}

impl Default for LbfgsOptions {
    fn default() -> Self {
        LbfgsOptions {
            memory: 10,
            max_iter: 500,
            gtol: 1e-8,
            ftol: 1e-15,
            max_line_search: 40,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    GradientTolerance,
    ObjectiveDecrease,
    MaxIterations,
    LineSearchFailed,
    NonFinite,
}

#[derive(Debug, Clone)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub gradient_norm: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub termination: Termination,
    /// Objective at the start point and after each accepted step.
    pub history: Vec<f64>,
}

impl Minimum {
    pub fn converged(&self) -> bool {
        matches!(self.termination, Termination::GradientTolerance | Termination::ObjectiveDecrease)
    }
}

const C1: f64 = 1e-4;
const C2: f64 = 0.9;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn max_abs(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, v| m.max(v.abs()))
}

struct Evaluator<F> {
    f: F,
    count: usize,
}

impl<F: FnMut(&[f64], &mut [f64]) -> f64> Evaluator<F> {
    fn eval(&mut self, x: &[f64], g: &mut [f64]) -> f64 {
        self.count += 1;
        (self.f)(x, g)
    }
}

/// Minimizes `f` from `x0`. The closure writes the gradient into its second
/// argument and returns the objective value.
pub fn minimize<F>(f: F, x0: &[f64], opts: &LbfgsOptions) -> Minimum
where
    F: FnMut(&[f64], &mut [f64]) -> f64,
{
    let n = x0.len();
    let mut ev = Evaluator { f, count: 0 };
    let mut x = x0.to_vec();
    let mut g = vec![0.0; n];
    let mut fx = ev.eval(&x, &mut g);
    let mut history = vec![fx];

    let finish = |x: Vec<f64>, fx: f64, g: &[f64], it: usize, count: usize, term: Termination, history: Vec<f64>| Minimum {
        x,
        value: fx,
        gradient_norm: max_abs(g),
        iterations: it,
        evaluations: count,
        termination: term,
        history,
    };

    if !fx.is_finite() || g.iter().any(|v| !v.is_finite()) {
        let c = ev.count;
        return finish(x, fx, &g, 0, c, Termination::NonFinite, history);
    }
    if max_abs(&g) <= opts.gtol {
        let c = ev.count;
        return finish(x, fx, &g, 0, c, Termination::GradientTolerance, history);
    }

    let mut pairs: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::with_capacity(opts.memory);
    let mut d = vec![0.0; n];
    let mut x_new = vec![0.0; n];
    let mut g_new = vec![0.0; n];

    for it in 1..=opts.max_iter {
        two_loop(&g, &pairs, &mut d);
        let mut slope = dot(&g, &d);
        if !(slope < 0.0) {
            pairs.clear();
            for (di, gi) in d.iter_mut().zip(&g) {
                *di = -gi;
            }
            slope = -dot(&g, &g);
        }
        let step0 = if pairs.is_empty() {
            (1.0 / d.iter().map(|v| v * v).sum::<f64>().sqrt()).min(1.0)
        } else {
            1.0
        };

        let ls = line_search(&mut ev, &x, fx, slope, &d, step0, opts.max_line_search, &mut x_new, &mut g_new);
        let Some(f_new) = ls else {
            let c = ev.count;
            let term = if g_new.iter().any(|v| !v.is_finite()) {
                Termination::NonFinite
            } else {
                Termination::LineSearchFailed
            };
            return finish(x, fx, &g, it - 1, c, term, history);
        };
        if !f_new.is_finite() {
            let c = ev.count;
            return finish(x, fx, &g, it - 1, c, Termination::NonFinite, history);
        }

        let s: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-16 * dot(&y, &y).sqrt() * dot(&s, &s).sqrt() && sy > 0.0 {
            if pairs.len() == opts.memory {
                pairs.pop_front();
            }
            pairs.push_back((s, y, 1.0 / sy));
        }

        let decrease = fx - f_new;
        let scale = fx.abs().max(f_new.abs()).max(1.0);
        std::mem::swap(&mut x, &mut x_new);
        std::mem::swap(&mut g, &mut g_new);
        fx = f_new;
        history.push(fx);

        if max_abs(&g) <= opts.gtol {
            let c = ev.count;
            return finish(x, fx, &g, it, c, Termination::GradientTolerance, history);
        }
        if decrease <= opts.ftol * scale {
            let c = ev.count;
            return finish(x, fx, &g, it, c, Termination::ObjectiveDecrease, history);
        }
    }
    let c = ev.count;
    finish(x, fx, &g, opts.max_iter, c, Termination::MaxIterations, history)
}

fn two_loop(g: &[f64], pairs: &VecDeque<(Vec<f64>, Vec<f64>, f64)>, d: &mut [f64]) {
    d.copy_from_slice(g);
    let mut alphas = vec![0.0; pairs.len()];
    for (k, (s, y, rho)) in pairs.iter().enumerate().rev() {
        let a = rho * dot(s, d);
        alphas[k] = a;
        for (di, yi) in d.iter_mut().zip(y) {
            *di -= a * yi;
        }
    }
    if let Some((s, y, _)) = pairs.back() {
        let gamma = dot(s, y) / dot(y, y);
        for di in d.iter_mut() {
            *di *= gamma;
        }
    }
    for (k, (s, y, rho)) in pairs.iter().enumerate() {
        let b = rho * dot(y, d);
        for (di, si) in d.iter_mut().zip(s) {
            *di += (alphas[k] - b) * si;
        }
    }
    for di in d.iter_mut() {
        *di = -*di;
    }
}

/// Strong Wolfe line search. On success `x_new`, `g_new` hold the accepted
/// point and the returned value is its objective.
#[allow(clippy::too_many_arguments)]
fn line_search<F: FnMut(&[f64], &mut [f64]) -> f64>(
    ev: &mut Evaluator<F>,
    x: &[f64],
    f0: f64,
    slope0: f64,
    d: &[f64],
    step0: f64,
    max_evals: usize,
    x_new: &mut [f64],
    g_new: &mut [f64],
) -> Option<f64> {
    let mut eval_at = |ev: &mut Evaluator<F>, a: f64, xn: &mut [f64], gn: &mut [f64]| -> (f64, f64) {
        for ((xi, x0), di) in xn.iter_mut().zip(x).zip(d) {
            *xi = x0 + a * di;
        }
        let f = ev.eval(xn, gn);
        (f, dot(gn, d))
    };

    let (mut a_prev, mut f_prev, mut s_prev) = (0.0, f0, slope0);
    let mut a = step0;
    let mut best: Option<(f64, f64)> = None; // (step, value) satisfying Armijo
    for k in 0..max_evals {
        let (fa, sa) = eval_at(ev, a, x_new, g_new);
        if !fa.is_finite() || !sa.is_finite() {
            // Back off towards the last good step.
            a = 0.5 * (a_prev + a);
            if a - a_prev < 1e-20 {
                return None;
            }
            continue;
        }
        if fa > f0 + C1 * a * slope0 || (k > 0 && fa >= f_prev) {
            return zoom(ev, &mut eval_at, f0, slope0, (a_prev, f_prev, s_prev), (a, fa, sa), max_evals, x_new, g_new, best);
        }
        best = Some((a, fa));
        if sa.abs() <= -C2 * slope0 {
            return Some(fa);
        }
        if sa >= 0.0 {
            return zoom(ev, &mut eval_at, f0, slope0, (a, fa, sa), (a_prev, f_prev, s_prev), max_evals, x_new, g_new, best);
        }
        a_prev = a;
        f_prev = fa;
        s_prev = sa;
        a *= 2.0;
    }
    best.map(|(a, _)| eval_at(ev, a, x_new, g_new).0)
}

#[allow(clippy::too_many_arguments)]
fn zoom<F, E>(
    ev: &mut Evaluator<F>,
    eval_at: &mut E,
    f0: f64,
    slope0: f64,
    mut lo: (f64, f64, f64),
    mut hi: (f64, f64, f64),
    max_evals: usize,
    x_new: &mut [f64],
    g_new: &mut [f64],
    mut best: Option<(f64, f64)>,
) -> Option<f64>
where
    F: FnMut(&[f64], &mut [f64]) -> f64,
    E: FnMut(&mut Evaluator<F>, f64, &mut [f64], &mut [f64]) -> (f64, f64),
{
    for _ in 0..max_evals {
        let a = interpolate(lo, hi);
        let (fa, sa) = eval_at(ev, a, x_new, g_new);
        if !fa.is_finite() || fa > f0 + C1 * a * slope0 || fa >= lo.1 {
            hi = (a, fa, sa);
        } else {
            best = Some((a, fa));
            if sa.abs() <= -C2 * slope0 {
                return Some(fa);
            }
            if sa * (hi.0 - lo.0) >= 0.0 {
                hi = lo;
            }
            lo = (a, fa, sa);
        }
        if (hi.0 - lo.0).abs() <= 1e-16 * lo.0.abs().max(1e-300) {
            break;
        }
    }
    // Fall back to the best sufficient-decrease point seen.
    match best {
        Some((a, fa)) if fa < f0 => {
            let (f, _) = eval_at(ev, a, x_new, g_new);
            Some(f)
        }
        _ => None,
    }
}

/// Minimizer of the cubic through both endpoints, kept inside the middle 80%
/// of the bracket; bisection when the cubic is degenerate.
fn interpolate(lo: (f64, f64, f64), hi: (f64, f64, f64)) -> f64 {
    let (a0, f0, g0) = lo;
    let (a1, f1, g1) = hi;
    let (left, right) = if a0 < a1 { (a0, a1) } else { (a1, a0) };
    let width = right - left;
    let mid = 0.5 * (left + right);
    if !(f1.is_finite() && g1.is_finite()) {
        return mid;
    }
    let d1 = g0 + g1 - 3.0 * (f0 - f1) / (a0 - a1);
    let disc = d1 * d1 - g0 * g1;
    if disc < 0.0 {
        return mid;
    }
    let d2 = (a1 - a0).signum() * disc.sqrt();
    let denom = g1 - g0 + 2.0 * d2;
    if denom == 0.0 {
        return mid;
    }
    let a = a1 - (a1 - a0) * (g1 + d2 - d1) / denom;
    if !a.is_finite() {
        return mid;
    }
    a.clamp(left + 0.1 * width, right - 0.1 * width)
}
