//! Synthetic benchmark tasks: random Fourier feature approximations of
//! draws from a squared-exponential GP prior on the unit cube.

mod bo;

pub use bo::{bo_run, regret_curve, AcquisitionObjective, AlphaMode, BoSettings, TrialEntry, TrialLog, REGRET_FLOOR};

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gp::{unit_bounds, Bounds};
use crate::kernel::KernelParams;
use crate::linalg::Matrix;
use crate::optim::{lbfgs_box, LbfgsSettings, SearchBox};
use crate::par::{derive_seed, map_indexed, Parallelism};

pub const DEFAULT_FEATURES: usize = 1024;

/// `f(x) = Σ_j w_j cos(ω_j·x + b_j)` with `ω_j ~ N(0, diag(1/ℓ²))`,
/// `b_j ~ U[0, 2π)` and `w_j ~ N(0, 2σ²/m)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticTask {
    pub dim: usize,
    pub feature_count: usize,
    pub frequencies: Matrix,
    pub phases: Vec<f64>,
    pub weights: Vec<f64>,
    pub params: KernelParams,
    pub seed: u64,
    pub estimated_max: Option<f64>,
}

pub fn sample_task(d: usize, params: &KernelParams, m: usize, seed: u64) -> Result<SyntheticTask> {
    if d == 0 || params.dim() != d {
        return Err(Error::DimensionMismatch(format!("{d}-dim task with {}-dim kernel", params.dim())));
    }
    if m < 64 {
        return Err(Error::InvalidArgument(format!("need at least 64 features, got {m}")));
    }
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let frequencies = Matrix::from_fn(m, d, |_, k| {
        let z: f64 = rng.sample(StandardNormal);
        z / params.lengthscales[k]
    });
    let phases = (0..m).map(|_| 2.0 * PI * rng.random::<f64>()).collect();
    let scale = (2.0 * params.signal_variance / m as f64).sqrt();
    let weights = (0..m)
        .map(|_| {
            let z: f64 = rng.sample(StandardNormal);
            scale * z
        })
        .collect();
    Ok(SyntheticTask {
        dim: d,
        feature_count: m,
        frequencies,
        phases,
        weights,
        params: params.clone(),
        seed,
        estimated_max: None,
    })
}

impl SyntheticTask {
    pub fn bounds(&self) -> Bounds {
        unit_bounds(self.dim)
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        (0..self.feature_count)
            .map(|j| {
                let arg: f64 = self.frequencies.row(j).iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + self.phases[j];
                self.weights[j] * arg.cos()
            })
            .sum()
    }

    pub fn value_and_grad(&self, x: &[f64]) -> (f64, Vec<f64>) {
        let mut g = vec![0.0; self.dim];
        let mut v = 0.0;
        for j in 0..self.feature_count {
            let omega = self.frequencies.row(j);
            let arg: f64 = omega.iter().zip(x).map(|(w, u)| w * u).sum::<f64>() + self.phases[j];
            let (s, c) = arg.sin_cos();
            v += self.weights[j] * c;
            for (gk, wk) in g.iter_mut().zip(omega) {
                *gk -= self.weights[j] * s * wk;
            }
        }
        (v, g)
    }
}

/// Evaluates the task at every row of `x`.
pub fn task_eval(task: &SyntheticTask, x: &Matrix) -> Result<Vec<f64>> {
    if x.cols() != task.dim {
        return Err(Error::DimensionMismatch(format!("{}-column pool for a {}-dim task", x.cols(), task.dim)));
    }
    crate::gp::check_inside(x, &task.bounds())?;
    Ok((0..x.rows()).map(|i| task.value(x.row(i))).collect())
}

const MAX_SEARCH_CANDIDATES: usize = 64;

pub const MIN_RESTARTS: usize = 16;

fn max_search_settings() -> LbfgsSettings {
    LbfgsSettings { max_iters: 500, pg_tol: 1e-10, ..LbfgsSettings::default() }
}

/// Best value from restart `r`: the best of 64 uniform points drawn from the
/// stream `(seed, r)`, polished by projected L-BFGS.
fn restart_value(task: &SyntheticTask, bounds: &SearchBox, seed: u64, r: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[r]));
    let start = (0..MAX_SEARCH_CANDIDATES)
        .map(|_| bounds.sample(&mut rng))
        .map(|x| (task.value(&x), x))
        .fold((f64::NEG_INFINITY, Vec::new()), |best, c| if c.0 > best.0 { c } else { best });
    polish(task, bounds, &[start.1])
}

fn polish(task: &SyntheticTask, bounds: &SearchBox, starts: &[Vec<f64>]) -> f64 {
    lbfgs_box(|x: &[f64]| task.value_and_grad(x), starts, bounds, &max_search_settings(), Parallelism::Sequential)
        .best_value
}

/// Multistart estimate of the task maximum over the unit cube. Restart `r`
/// depends only on `(seed, r)`, so more restarts never lower the estimate.
pub fn estimate_task_max(task: &SyntheticTask, restarts: usize, seed: u64, par: Parallelism) -> Result<f64> {
    if restarts < MIN_RESTARTS {
        return Err(Error::InvalidArgument(format!("need at least {MIN_RESTARTS} restarts, got {restarts}")));
    }
    let bounds = SearchBox::for_pool(1, &task.bounds())?;
    let values = map_indexed(par, restarts, |r| restart_value(task, &bounds, seed, r as u64));
    Ok(values.into_iter().fold(f64::NEG_INFINITY, f64::max))
}

/// Re-estimates the maximum with `restarts` restarts and additionally
/// polishes each point in `seen`, so the result is at least every value
/// observed there.
pub fn refine_task_max(
    task: &SyntheticTask,
    seen: &[Vec<f64>],
    restarts: usize,
    seed: u64,
    par: Parallelism,
) -> Result<f64> {
    let bounds = SearchBox::for_pool(1, &task.bounds())?;
    let base = estimate_task_max(task, restarts, seed, par)?;
    let polished = map_indexed(par, seen.len(), |i| polish(task, &bounds, &seen[i..i + 1]));
    Ok(polished.into_iter().fold(base, f64::max))
}

/// Empirical covariance of `f(x1)` and `f(x2)` over `n_tasks` tasks with
/// seeds derived from `seed`, returned with the kernel value it estimates.
pub fn rff_covariance_check(
    params: &KernelParams,
    m: usize,
    x1: &[f64],
    x2: &[f64],
    n_tasks: usize,
    seed: u64,
    par: Parallelism,
) -> Result<(f64, f64)> {
    let exact = crate::kernel::kern(x1, x2, params)?;
    if n_tasks < 2 {
        return Err(Error::InvalidArgument("need at least two tasks".into()));
    }
    let pairs = map_indexed(par, n_tasks, |i| {
        sample_task(params.dim(), params, m, derive_seed(seed, &[i as u64])).map(|t| (t.value(x1), t.value(x2)))
    });
    let pairs = pairs.into_iter().collect::<Result<Vec<_>>>()?;
    let n = n_tasks as f64;
    let m1 = pairs.iter().map(|p| p.0).sum::<f64>() / n;
    let m2 = pairs.iter().map(|p| p.1).sum::<f64>() / n;
    let cov = pairs.iter().map(|p| (p.0 - m1) * (p.1 - m2)).sum::<f64>() / (n - 1.0);
    Ok((cov, exact))
}
