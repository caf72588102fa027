//! Limited-memory BFGS with gradient projection onto a box.
//!
//! Coordinates pinned at a bound with the gradient pushing outward are held
//! fixed; the two-loop recursion runs on the remaining free coordinates, and
//! trial steps follow the projected path `P(x + t·d)`.

use std::collections::VecDeque;

use super::{sanitize, OptResult, SearchBox};
use crate::par::{map_slice, Parallelism};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LbfgsSettings {
    pub memory: usize,
    pub max_iters: usize,
    /// Evaluations allowed per start, including the one at the start point.
    pub max_evals: usize,
    /// Stop once the projected gradient max-norm falls below this.
    pub pg_tol: f64,
    /// Sufficient-decrease constant.
    pub c1: f64,
    /// Curvature constant of the strong Wolfe test.
    pub c2: f64,
    pub max_line_search_evals: usize,
}

impl Default for LbfgsSettings {
    fn default() -> Self {
        Self {
            memory: 10,
            max_iters: 200,
            max_evals: usize::MAX,
            pg_tol: 1e-6,
            c1: 1e-4,
            c2: 0.9,
            max_line_search_evals: 20,
        }
    }
}

/// Runs projected L-BFGS from every start (independently, possibly in
/// parallel) and returns the best point found. Every iterate lies in the box.
pub fn lbfgs_box(
    objective: impl Fn(&[f64]) -> (f64, Vec<f64>) + Sync,
    starts: &[Vec<f64>],
    bounds: &SearchBox,
    settings: &LbfgsSettings,
    par: Parallelism,
) -> OptResult {
    let runs = map_slice(par, starts, |s| run_start(&objective, s, bounds, settings));
    OptResult::merge(runs)
}

/// Minimization view of the maximization objective.
struct Negated<'a, F> {
    f: &'a F,
    out: OptResult,
    max_evals: usize,
}

impl<F: Fn(&[f64]) -> (f64, Vec<f64>)> Negated<'_, F> {
    fn exhausted(&self) -> bool {
        self.out.evals_used >= self.max_evals
    }

    fn eval(&mut self, x: &[f64]) -> (f64, Vec<f64>) {
        let (v, g) = (self.f)(x);
        let v = sanitize(v);
        self.out.observe(x, v);
        if v.is_finite() && g.iter().all(|c| c.is_finite()) {
            (-v, g.into_iter().map(|c| -c).collect())
        } else {
            (f64::INFINITY, vec![0.0; x.len()])
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn max_abs(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, v| m.max(v.abs()))
}

/// Whether coordinate `i` is held at a bound by a gradient pointing outward.
fn is_active(x: &[f64], g: &[f64], b: &SearchBox, i: usize) -> bool {
    (x[i] <= b.lower[i] && g[i] > 0.0) || (x[i] >= b.upper[i] && g[i] < 0.0)
}

fn projected_gradient_norm(x: &[f64], g: &[f64], b: &SearchBox) -> f64 {
    (0..x.len()).map(|i| ((x[i] - g[i]).clamp(b.lower[i], b.upper[i]) - x[i]).abs()).fold(0.0, f64::max)
}

fn two_loop(g: &[f64], free: &[bool], memory: &VecDeque<(Vec<f64>, Vec<f64>, f64)>) -> Vec<f64> {
    let mut r: Vec<f64> = g.iter().zip(free).map(|(v, &f)| if f { *v } else { 0.0 }).collect();
    let mask = |v: &[f64]| -> Vec<f64> { v.iter().zip(free).map(|(x, &f)| if f { *x } else { 0.0 }).collect() };
    let pairs: Vec<(Vec<f64>, Vec<f64>)> = memory.iter().map(|(s, y, _)| (mask(s), mask(y))).collect();
    let mut alphas = Vec::with_capacity(pairs.len());
    for (s, y) in pairs.iter().rev() {
        let sy = dot(s, y);
        if sy <= 0.0 {
            alphas.push(0.0);
            continue;
        }
        let a = dot(s, &r) / sy;
        for (ri, yi) in r.iter_mut().zip(y) {
            *ri -= a * yi;
        }
        alphas.push(a);
    }
    if let Some((s, y)) = pairs.last() {
        let yy = dot(y, y);
        let sy = dot(s, y);
        if yy > 0.0 && sy > 0.0 {
            let gamma = sy / yy;
            r.iter_mut().for_each(|v| *v *= gamma);
        }
    }
    for ((s, y), a) in pairs.iter().zip(alphas.iter().rev()) {
        let sy = dot(s, y);
        if sy <= 0.0 {
            continue;
        }
        let b = dot(y, &r) / sy;
        for (ri, si) in r.iter_mut().zip(s) {
            *ri += (a - b) * si;
        }
    }
    r.iter_mut().for_each(|v| *v = -*v);
    r
}

struct Step {
    x: Vec<f64>,
    f: f64,
    g: Vec<f64>,
}

/// Backtracking/expanding search along the projected path. Returns `None`
/// when no point satisfying sufficient decrease is found.
#[allow(clippy::too_many_arguments)]
fn line_search<F: Fn(&[f64]) -> (f64, Vec<f64>)>(
    obj: &mut Negated<'_, F>,
    x: &[f64],
    f: f64,
    g: &[f64],
    d: &[f64],
    t0: f64,
    b: &SearchBox,
    s: &LbfgsSettings,
) -> Option<Step> {
    let dg0 = dot(g, d);
    let mut t = t0;
    let mut best: Option<Step> = None;
    let mut hi = f64::INFINITY;
    for _ in 0..s.max_line_search_evals {
        if obj.exhausted() {
            break;
        }
        let mut xt: Vec<f64> = x.iter().zip(d).map(|(a, b)| a + t * b).collect();
        b.project(&mut xt);
        let step: Vec<f64> = xt.iter().zip(x).map(|(a, b)| a - b).collect();
        if max_abs(&step) == 0.0 {
            break;
        }
        let (ft, gt) = obj.eval(&xt);
        let armijo = ft <= f + s.c1 * dot(g, &step).min(0.0) && ft < f;
        if !armijo {
            hi = t;
            if best.is_some() {
                break;
            }
            t *= 0.5;
            continue;
        }
        let clipped = step.iter().zip(d).any(|(st, di)| (st - t * di).abs() > 1e-15 * (1.0 + di.abs()));
        let dgt = dot(&gt, d);
        let better = best.as_ref().is_none_or(|bs| ft < bs.f);
        if better {
            best = Some(Step { x: xt, f: ft, g: gt });
        }
        if dgt.abs() <= s.c2 * dg0.abs() || clipped || dgt > 0.0 {
            break;
        }
        // Still descending steeply: try a longer step unless bracketed.
        if hi.is_finite() {
            break;
        }
        t *= 2.0;
    }
    best
}

/// Step length for a steepest-descent direction: at most a tenth of the
/// narrowest box side, and never longer than the unit step.
fn first_step(d: &[f64], b: &SearchBox) -> f64 {
    let width = b.lower.iter().zip(&b.upper).map(|(l, u)| u - l).fold(f64::INFINITY, f64::min);
    (0.1 * width / max_abs(d).max(1e-300)).min(1.0)
}

fn run_start<F: Fn(&[f64]) -> (f64, Vec<f64>)>(
    objective: &F,
    start: &[f64],
    b: &SearchBox,
    s: &LbfgsSettings,
) -> OptResult {
    let mut obj = Negated { f: objective, out: OptResult::empty(), max_evals: s.max_evals.max(1) };
    let mut x = start.to_vec();
    b.project(&mut x);
    let (mut f, mut g) = obj.eval(&x);
    if !f.is_finite() {
        return obj.out;
    }
    let mut memory: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::with_capacity(s.memory);
    for _ in 0..s.max_iters {
        if projected_gradient_norm(&x, &g, b) < s.pg_tol || obj.exhausted() {
            break;
        }
        let free: Vec<bool> = (0..x.len()).map(|i| !is_active(&x, &g, b, i)).collect();
        let mut d = two_loop(&g, &free, &memory);
        let mut quasi_newton = !memory.is_empty();
        if dot(&d, &g) >= 0.0 {
            d = g.iter().zip(&free).map(|(v, &fr)| if fr { -v } else { 0.0 }).collect();
            quasi_newton = false;
        }
        let t0 = if quasi_newton { 1.0 } else { first_step(&d, b) };
        let step = match line_search(&mut obj, &x, f, &g, &d, t0, b, s) {
            Some(st) => st,
            None => {
                obj.out.line_search_failures += 1;
                if !quasi_newton || obj.exhausted() {
                    break;
                }
                memory.clear();
                let sd: Vec<f64> = g.iter().zip(&free).map(|(v, &fr)| if fr { -v } else { 0.0 }).collect();
                let t0 = first_step(&sd, b);
                match line_search(&mut obj, &x, f, &g, &sd, t0, b, s) {
                    Some(st) => st,
                    None => {
                        obj.out.line_search_failures += 1;
                        break;
                    }
                }
            }
        };
        let sv: Vec<f64> = step.x.iter().zip(&x).map(|(a, b)| a - b).collect();
        let yv: Vec<f64> = step.g.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&sv, &yv);
        if sy > 1e-10 * dot(&sv, &sv).sqrt() * dot(&yv, &yv).sqrt() && sy > 0.0 {
            if memory.len() == s.memory {
                memory.pop_front();
            }
            memory.push_back((sv, yv, sy));
        }
        x = step.x;
        f = step.f;
        g = step.g;
    }
    obj.out
}
