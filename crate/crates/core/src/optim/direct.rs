//! DIvided RECTangles on the unit cube, after Jones, Perttunen and Stuckman.

use std::collections::BTreeMap;

use super::{sanitize, OptResult, SearchBox};
use crate::par::{map_indexed, Parallelism};

/// Sides shorter than `3^-MAX_LEVEL` are not divided further.
const MAX_LEVEL: u32 = 30;

struct Rect {
    center: Vec<f64>,
    /// Side `i` has length `3^-levels[i]`.
    levels: Vec<u32>,
    /// Minimization value, `-objective`.
    f: f64,
}

impl Rect {
    fn size_key(&self) -> Vec<u32> {
        let mut k = self.levels.clone();
        k.sort_unstable();
        k
    }

    fn size(&self) -> f64 {
        0.5 * self.levels.iter().map(|&l| 9f64.powi(-(l as i32))).sum::<f64>().sqrt()
    }
}

/// Maximizes `objective` over `bounds` with DIRECT, stopping after exactly
/// `budget` evaluations. The first evaluation is the box center.
pub fn direct(
    objective: impl Fn(&[f64]) -> f64 + Sync,
    bounds: &SearchBox,
    budget: usize,
    epsilon: f64,
    par: Parallelism,
) -> OptResult {
    let n = bounds.dim();
    let mut out = OptResult::empty();
    if budget == 0 {
        return out;
    }
    let eval = |u: &[f64]| -> (Vec<f64>, f64) {
        let x = bounds.from_unit(u);
        let v = sanitize(objective(&x));
        (x, v)
    };
    let center = vec![0.5; n];
    let (x0, v0) = eval(&center);
    out.observe(&x0, v0);
    let mut rects = vec![Rect { center, levels: vec![0; n], f: to_min(v0) }];

    while out.evals_used < budget {
        let selected = potentially_optimal(&rects, epsilon);
        if selected.is_empty() {
            break;
        }
        // Sample points for every selected rectangle, in selection order.
        let mut plans = Vec::new();
        let mut probes: Vec<Vec<f64>> = Vec::new();
        for &r in &selected {
            let rect = &rects[r];
            let min_level = *rect.levels.iter().min().expect("nonempty");
            if min_level >= MAX_LEVEL {
                continue;
            }
            let dims: Vec<usize> = (0..n).filter(|&i| rect.levels[i] == min_level).collect();
            let delta = 3f64.powi(-(min_level as i32 + 1));
            let first = probes.len();
            for &i in &dims {
                for s in [1.0, -1.0] {
                    let mut c = rect.center.clone();
                    c[i] += s * delta;
                    probes.push(c);
                }
            }
            plans.push((r, dims, first));
        }
        if probes.is_empty() {
            break;
        }
        let take = probes.len().min(budget - out.evals_used);
        let results = map_indexed(par, take, |k| eval(&probes[k]));
        for (x, v) in &results {
            out.observe(x, *v);
        }
        if take < probes.len() {
            break;
        }
        for (r, dims, first) in plans {
            let mut order: Vec<(f64, usize, usize)> = dims
                .iter()
                .enumerate()
                .map(|(j, &i)| {
                    let fp = to_min(results[first + 2 * j].1);
                    let fm = to_min(results[first + 2 * j + 1].1);
                    (fp.min(fm), i, j)
                })
                .collect();
            order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            let mut levels = rects[r].levels.clone();
            for &(_, i, j) in &order {
                levels[i] += 1;
                for side in 0..2 {
                    rects.push(Rect {
                        center: probes[first + 2 * j + side].clone(),
                        levels: levels.clone(),
                        f: to_min(results[first + 2 * j + side].1),
                    });
                }
            }
            rects[r].levels = levels;
        }
    }
    out
}

/// Minimization value; failed evaluations become a huge finite value so the
/// hull arithmetic stays finite.
fn to_min(v: f64) -> f64 {
    if v.is_finite() {
        -v
    } else {
        1e300
    }
}

/// Indices of potentially optimal rectangles: for each size class the
/// lowest-value member (lowest index on ties), kept if it lies on the lower
/// right convex hull of (size, value) and beats the incumbent by the
/// `epsilon` slack for some admissible Lipschitz constant.
fn potentially_optimal(rects: &[Rect], epsilon: f64) -> Vec<usize> {
    let mut groups: BTreeMap<Vec<u32>, usize> = BTreeMap::new();
    for (i, r) in rects.iter().enumerate() {
        if r.levels.iter().min().is_some_and(|&l| l >= MAX_LEVEL) {
            continue;
        }
        groups
            .entry(r.size_key())
            .and_modify(|best| {
                if r.f < rects[*best].f {
                    *best = i;
                }
            })
            .or_insert(i);
    }
    let cands: Vec<(f64, f64, usize)> = groups.values().map(|&i| (rects[i].size(), rects[i].f, i)).collect();
    let f_min = rects.iter().map(|r| r.f).fold(f64::INFINITY, f64::min);
    let target = f_min - epsilon * f_min.abs();
    let mut selected = Vec::new();
    for &(dj, fj, j) in &cands {
        let mut k_low = 0.0f64;
        let mut k_up = f64::INFINITY;
        let mut dominated = false;
        for &(di, fi, _) in &cands {
            if di < dj {
                k_low = k_low.max((fj - fi) / (dj - di));
            } else if di > dj {
                k_up = k_up.min((fi - fj) / (di - dj));
            } else if fi < fj {
                dominated = true;
            }
        }
        if dominated || k_low > k_up {
            continue;
        }
        if k_up.is_infinite() || fj - k_up * dj <= target {
            selected.push(j);
        }
    }
    selected.sort_by(|&a, &b| {
        let sa = rects[a].size();
        let sb = rects[b].size();
        sb.total_cmp(&sa).then(a.cmp(&b))
    });
    selected
}
