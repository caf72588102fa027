use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{task_eval, SyntheticTask};
use crate::acquisition::{Acquisition, AcquisitionSpec, BaseSampleBlock};
use crate::error::{Error, Result};
use crate::gp::{Dataset, GpModel};
use crate::linalg::{JitterPolicy, Matrix};
use crate::optim::{optimize, Objective, OptimizerConfig, SearchBox};
use crate::par::{derive_seed, Parallelism};

pub const REGRET_FLOOR: f64 = 1e-9;

/// Samples used to rank multistart candidates.
const CHEAP_SAMPLES: usize = 32;
/// Samples used to compare the final iterates of stochastic runs.
const RESCORE_SAMPLES: usize = 1024;

/// How the improvement threshold is chosen at each iteration.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum AlphaMode {
    /// The best output observed so far.
    #[default]
    BestObserved,
    Fixed {
        value: f64,
    },
}

/// The acquisition estimate as a function of a flattened pool.
pub struct AcquisitionObjective<'m> {
    acq: Acquisition<'m>,
    q: usize,
    d: usize,
    fixed: BaseSampleBlock,
    cheap: BaseSampleBlock,
    rescore: BaseSampleBlock,
    minibatch: usize,
    seed: u64,
}

impl<'m> AcquisitionObjective<'m> {
    /// Base samples derive from `seed`: one fixed block for deterministic
    /// evaluation and resampled minibatches per `(stream, step)`.
    pub fn new(
        model: &'m GpModel,
        spec: AcquisitionSpec,
        q: usize,
        minibatch: usize,
        seed: u64,
        par: Parallelism,
    ) -> Self {
        let acq = Acquisition::new(model, spec).with_parallelism(par);
        Self {
            acq,
            q,
            d: model.data().dim(),
            fixed: BaseSampleBlock::fixed(spec.n_samples, q, derive_seed(seed, &[0])),
            cheap: BaseSampleBlock::fixed(CHEAP_SAMPLES, q, derive_seed(seed, &[1])),
            rescore: BaseSampleBlock::fixed(RESCORE_SAMPLES, q, derive_seed(seed, &[2])),
            minibatch,
            seed,
        }
    }

    fn pool(&self, x: &[f64]) -> Matrix {
        Matrix::from_vec(self.q, self.d, x.to_vec()).expect("flattened pool has q·d entries")
    }

    fn with_samples(&self, n: usize) -> Acquisition<'m> {
        let mut a = self.acq;
        a.spec.n_samples = n;
        a
    }

    fn value_with(&self, x: &[f64], z: &BaseSampleBlock) -> f64 {
        self.with_samples(z.n()).estimate(&self.pool(x), z).map_or(f64::NEG_INFINITY, |e| e.value)
    }

    fn grad_with(&self, x: &[f64], z: &BaseSampleBlock) -> (f64, Vec<f64>) {
        match self.with_samples(z.n()).estimate_gradient(&self.pool(x), z) {
            Ok(g) => (g.value, g.grad.into_vec()),
            Err(_) => (f64::NEG_INFINITY, vec![0.0; x.len()]),
        }
    }
}

impl Objective for AcquisitionObjective<'_> {
    fn dim(&self) -> usize {
        self.q * self.d
    }

    fn value(&self, x: &[f64]) -> f64 {
        self.value_with(x, &self.fixed)
    }

    fn value_and_grad(&self, x: &[f64]) -> (f64, Vec<f64>) {
        self.grad_with(x, &self.fixed)
    }

    fn cheap_value(&self, x: &[f64]) -> f64 {
        self.value_with(x, &self.cheap)
    }

    fn stochastic_value_and_grad(&self, x: &[f64], stream: u64, step: u64) -> (f64, Vec<f64>) {
        let z = BaseSampleBlock::resampled(self.minibatch, self.q, derive_seed(self.seed, &[3]), stream, step);
        self.grad_with(x, &z)
    }

    fn rescore(&self, x: &[f64]) -> f64 {
        self.value_with(x, &self.rescore)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialEntry {
    pub iteration: usize,
    /// Row-major q×d pool.
    pub pool: Vec<f64>,
    pub observed: Vec<f64>,
    pub best_so_far: f64,
    pub wall_time: f64,
    /// Whether the pool came from the uniform fallback.
    pub fallback: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialLog {
    pub task_seed: u64,
    pub q: usize,
    pub d: usize,
    pub entries: Vec<TrialEntry>,
    pub config_digest: String,
}

impl TrialLog {
    pub fn max_observed(&self) -> f64 {
        self.entries.iter().flat_map(|e| e.observed.iter().copied()).fold(f64::NEG_INFINITY, f64::max)
    }

    /// Every observed input with its value.
    pub fn observations(&self) -> impl Iterator<Item = (&[f64], f64)> {
        self.entries.iter().flat_map(move |e| e.pool.chunks(self.d).zip(e.observed.iter().copied()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoSettings {
    pub alpha_mode: AlphaMode,
    pub jitter: JitterPolicy,
    /// Record wall-clock time per entry; otherwise times are zero so logs
    /// are reproducible byte for byte.
    pub record_time: bool,
    pub config_digest: String,
    pub par: Parallelism,
}

impl Default for BoSettings {
    fn default() -> Self {
        Self {
            alpha_mode: AlphaMode::BestObserved,
            jitter: JitterPolicy::default(),
            record_time: false,
            config_digest: String::new(),
            par: Parallelism::default(),
        }
    }
}

fn uniform_pool(bounds: &SearchBox, seed: u64) -> Vec<f64> {
    bounds.sample(&mut ChaCha8Rng::seed_from_u64(seed))
}

/// Batch BO on `task`: one uniform initial batch of `q` points, then
/// `total_evals/q − 1` rounds of fitting the GP, maximizing the acquisition
/// function and evaluating the chosen pool.
///
/// Randomness derives from `seed`: the initial batch, the base samples of
/// round `t` and the optimizer seed of round `t` each have their own stream.
/// A model or optimizer failure falls back to one uniform pool for that
/// round.
pub fn bo_run(
    task: &SyntheticTask,
    spec: &AcquisitionSpec,
    opt: &OptimizerConfig,
    q: usize,
    total_evals: usize,
    seed: u64,
    settings: &BoSettings,
) -> Result<TrialLog> {
    if q == 0 || total_evals == 0 || !total_evals.is_multiple_of(q) {
        return Err(Error::InvalidArgument(format!(
            "total_evals {total_evals} must be a positive multiple of q = {q}"
        )));
    }
    spec.validate()?;
    opt.validate()?;
    let start = Instant::now();
    let d = task.dim;
    let bounds = task.bounds();
    let pool_box = SearchBox::for_pool(q, &bounds)?;
    let mut data = Dataset::empty(bounds);
    let mut entries = Vec::with_capacity(total_evals / q);
    let mut best = f64::NEG_INFINITY;
    let mut record =
        |iteration: usize, pool: Vec<f64>, fallback: bool, data: &mut Dataset, best: &mut f64| -> Result<()> {
            let x = Matrix::from_vec(q, d, pool.clone())?;
            let y = task_eval(task, &x)?;
            data.extend(&x, &y)?;
            *best = y.iter().copied().fold(*best, f64::max);
            let wall_time = if settings.record_time { start.elapsed().as_secs_f64() } else { 0.0 };
            entries.push(TrialEntry { iteration, pool, observed: y, best_so_far: *best, wall_time, fallback });
            Ok(())
        };

    let initial = uniform_pool(&pool_box, derive_seed(seed, &[0]));
    record(0, initial, false, &mut data, &mut best)?;

    for t in 1..total_evals / q {
        let round = t as u64;
        let proposal = propose(&data, task, spec, opt, q, &pool_box, seed, round, settings);
        let (pool, fallback) = match proposal {
            Some(p) => (p, false),
            None => (uniform_pool(&pool_box, derive_seed(seed, &[3, round])), true),
        };
        record(t, pool, fallback, &mut data, &mut best)?;
    }
    Ok(TrialLog { task_seed: task.seed, q, d, entries, config_digest: settings.config_digest.clone() })
}

#[allow(clippy::too_many_arguments)]
fn propose(
    data: &Dataset,
    task: &SyntheticTask,
    spec: &AcquisitionSpec,
    opt: &OptimizerConfig,
    q: usize,
    pool_box: &SearchBox,
    seed: u64,
    round: u64,
    settings: &BoSettings,
) -> Option<Vec<f64>> {
    let model = GpModel::new(data.clone(), task.params.clone(), settings.jitter).ok()?;
    let mut spec = *spec;
    spec.alpha = match settings.alpha_mode {
        AlphaMode::BestObserved => data.best_output()?,
        AlphaMode::Fixed { value } => value,
    };
    let objective =
        AcquisitionObjective::new(&model, spec, q, opt.minibatch, derive_seed(seed, &[1, round]), settings.par);
    let res = optimize(opt, &objective, pool_box, derive_seed(seed, &[2, round]), settings.par).ok()?;
    (res.best_value.is_finite() && pool_box.contains(&res.best_point)).then_some(res.best_point)
}

/// `(evals, log10(task_max − best_so_far + floor))` per log entry.
pub fn regret_curve(log: &TrialLog, task_max: f64) -> Result<Vec<(usize, f64)>> {
    let observed = log.max_observed();
    if observed > task_max {
        return Err(Error::InconsistentMax { observed, task_max });
    }
    Ok(log
        .entries
        .iter()
        .map(|e| ((e.iteration + 1) * log.q, (task_max - e.best_so_far + REGRET_FLOOR).log10()))
        .collect())
}
