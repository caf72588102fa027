//! Optimizers over the flattened `q·d` pool space: random search, DIRECT,
//! projected L-BFGS and Adam, plus Boltzmann multistart selection.
//!
//! All optimizers maximize.

mod adam;
mod direct;
mod lbfgs;
mod multistart;
mod random;

pub use adam::{adam_box, AdamSettings};
pub use direct::direct;
pub use lbfgs::{lbfgs_box, LbfgsSettings};
pub use multistart::multistart_init;
pub use random::random_search;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gp::Bounds;
use crate::par::Parallelism;

/// Axis-aligned search box over flattened pools.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchBox {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl SearchBox {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() || lower.is_empty() {
            return Err(Error::DimensionMismatch(format!(
                "box with {} lower and {} upper bounds",
                lower.len(),
                upper.len()
            )));
        }
        if lower.iter().zip(&upper).any(|(l, u)| !(l < u) || !l.is_finite() || !u.is_finite()) {
            return Err(Error::InvalidArgument("box needs finite lower < upper in every coordinate".into()));
        }
        Ok(Self { lower, upper })
    }

    /// The per-point `bounds` repeated for each of `q` pool members.
    pub fn for_pool(q: usize, bounds: &Bounds) -> Result<Self> {
        let lower = (0..q).flat_map(|_| bounds.iter().map(|b| b.0)).collect();
        let upper = (0..q).flat_map(|_| bounds.iter().map(|b| b.1)).collect();
        Self::new(lower, upper)
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn project(&self, x: &mut [f64]) {
        for ((v, l), u) in x.iter_mut().zip(&self.lower).zip(&self.upper) {
            *v = v.clamp(*l, *u);
        }
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim() && x.iter().zip(&self.lower).zip(&self.upper).all(|((v, l), u)| *l <= *v && *v <= *u)
    }

    pub fn center(&self) -> Vec<f64> {
        self.lower.iter().zip(&self.upper).map(|(l, u)| 0.5 * (l + u)).collect()
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> Vec<f64> {
        let mut x: Vec<f64> =
            self.lower.iter().zip(&self.upper).map(|(l, u)| l + (u - l) * rng.random::<f64>()).collect();
        // Guard against rounding past the upper bound.
        self.project(&mut x);
        x
    }

    /// Maps a point of the unit cube into the box.
    pub fn from_unit(&self, u: &[f64]) -> Vec<f64> {
        let mut x: Vec<f64> = u.iter().zip(&self.lower).zip(&self.upper).map(|((t, l), h)| l + t * (h - l)).collect();
        self.project(&mut x);
        x
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum OptimizerKind {
    Rs,
    Direct,
    #[default]
    Lbfgs,
    Adam,
}

impl OptimizerKind {
    pub const ALL: [OptimizerKind; 4] =
        [OptimizerKind::Rs, OptimizerKind::Direct, OptimizerKind::Lbfgs, OptimizerKind::Adam];

    pub fn name(self) -> &'static str {
        match self {
            OptimizerKind::Rs => "RS",
            OptimizerKind::Direct => "DIRECT",
            OptimizerKind::Lbfgs => "LBFGS",
            OptimizerKind::Adam => "ADAM",
        }
    }

    pub fn uses_gradients(self) -> bool {
        matches!(self, OptimizerKind::Lbfgs | OptimizerKind::Adam)
    }
}

impl std::fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.pad(self.name())
    }
}

impl std::str::FromStr for OptimizerKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.to_ascii_uppercase().as_str() {
            "RS" => Ok(OptimizerKind::Rs),
            "DIRECT" => Ok(OptimizerKind::Direct),
            "LBFGS" => Ok(OptimizerKind::Lbfgs),
            "ADAM" => Ok(OptimizerKind::Adam),
            other => Err(format!("unknown optimizer `{other}`")),
        }
    }
}

/// Settings shared by all optimizers; `kind` selects which one runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    /// Chosen per run, so not part of the serialized settings.
    #[serde(skip)]
    pub kind: OptimizerKind,
    /// Objective evaluations per call, counting value-only and
    /// value-with-gradient calls alike.
    pub eval_budget: usize,
    pub n_starts: usize,
    pub sgd_steps: usize,
    pub minibatch: usize,
    pub learning_rate: f64,
    pub lbfgs_memory: usize,
    pub direct_epsilon: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            kind: OptimizerKind::Lbfgs,
            eval_budget: 2048,
            n_starts: 32,
            sgd_steps: 1024,
            minibatch: 64,
            learning_rate: 0.01,
            lbfgs_memory: 10,
            direct_epsilon: 1e-4,
        }
    }
}

impl OptimizerConfig {
    pub fn with_kind(mut self, kind: OptimizerKind) -> Self {
        self.kind = kind;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("eval_budget", self.eval_budget),
            ("n_starts", self.n_starts),
            ("sgd_steps", self.sgd_steps),
            ("minibatch", self.minibatch),
            ("lbfgs_memory", self.lbfgs_memory),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(Error::InvalidArgument(format!("{name} must be at least 1")));
            }
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidArgument("learning_rate must be positive".into()));
        }
        if !(self.direct_epsilon >= 0.0 && self.direct_epsilon.is_finite()) {
            return Err(Error::InvalidArgument("direct_epsilon must be non-negative".into()));
        }
        Ok(())
    }

    /// Split of the budget for gradient methods: uniform candidates scored
    /// for start selection, number of starts, and evaluations per start.
    /// Half the budget goes to candidates; starts are reduced until each
    /// gets at least `min_per_start` evaluations.
    pub fn multistart_split(&self, min_per_start: usize) -> (usize, usize, usize) {
        let b = self.eval_budget;
        let candidates = (b / 2).max(1);
        let remaining = b.saturating_sub(candidates);
        let starts = self.n_starts.min(candidates).min(remaining / min_per_start).max(1);
        let per_start = (remaining / starts).max(min_per_start);
        (candidates, starts, per_start)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    /// Evaluations consumed when the incumbent improved.
    pub evals: usize,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptResult {
    pub best_point: Vec<f64>,
    pub best_value: f64,
    pub evals_used: usize,
    pub trace: Vec<TraceEntry>,
    pub line_search_failures: usize,
}

impl OptResult {
    fn empty() -> Self {
        Self {
            best_point: Vec::new(),
            best_value: f64::NEG_INFINITY,
            evals_used: 0,
            trace: Vec::new(),
            line_search_failures: 0,
        }
    }

    /// Records one evaluation; only strictly better values replace the
    /// incumbent.
    fn observe(&mut self, x: &[f64], value: f64) {
        self.evals_used += 1;
        if self.best_point.is_empty() || value > self.best_value {
            self.best_value = value;
            self.best_point = x.to_vec();
            self.trace.push(TraceEntry { evals: self.evals_used, value });
        }
    }

    /// Merges per-start results in start order.
    fn merge(parts: Vec<OptResult>) -> Self {
        let mut out = Self::empty();
        for p in parts {
            let offset = out.evals_used;
            for t in &p.trace {
                if out.trace.is_empty() || t.value > out.trace[out.trace.len() - 1].value {
                    out.trace.push(TraceEntry { evals: offset + t.evals, value: t.value });
                }
            }
            if !p.best_point.is_empty() && (out.best_point.is_empty() || p.best_value > out.best_value) {
                out.best_value = p.best_value;
                out.best_point = p.best_point;
            }
            out.evals_used += p.evals_used;
            out.line_search_failures += p.line_search_failures;
        }
        out
    }
}

/// Objective evaluations an optimizer may request. Non-finite values are
/// treated as the worst possible score.
pub trait Objective: Sync {
    fn dim(&self) -> usize;

    /// Deterministic value (fixed base samples).
    fn value(&self, x: &[f64]) -> f64;

    /// Deterministic value and gradient (fixed base samples).
    fn value_and_grad(&self, x: &[f64]) -> (f64, Vec<f64>);

    /// Low-cost value used to rank multistart candidates.
    fn cheap_value(&self, x: &[f64]) -> f64 {
        self.value(x)
    }

    /// Value and gradient on a fresh minibatch for `(stream, step)`.
    fn stochastic_value_and_grad(&self, x: &[f64], stream: u64, step: u64) -> (f64, Vec<f64>) {
        let _ = (stream, step);
        self.value_and_grad(x)
    }

    /// Accurate value used to compare final stochastic iterates.
    fn rescore(&self, x: &[f64]) -> f64 {
        self.value(x)
    }
}

#[inline]
pub(crate) fn sanitize(v: f64) -> f64 {
    if v.is_nan() {
        f64::NEG_INFINITY
    } else {
        v
    }
}

/// Runs the configured optimizer under its evaluation budget.
pub fn optimize(
    config: &OptimizerConfig,
    objective: &impl Objective,
    bounds: &SearchBox,
    seed: u64,
    par: Parallelism,
) -> Result<OptResult> {
    config.validate()?;
    if objective.dim() != bounds.dim() {
        return Err(Error::DimensionMismatch(format!(
            "objective over {} coordinates, box over {}",
            objective.dim(),
            bounds.dim()
        )));
    }
    let budget = config.eval_budget;
    Ok(match config.kind {
        OptimizerKind::Rs => random_search(|x: &[f64]| objective.value(x), bounds, budget, seed, par),
        OptimizerKind::Direct => direct(|x: &[f64]| objective.value(x), bounds, budget, config.direct_epsilon, par),
        OptimizerKind::Lbfgs => {
            let (candidates, n_starts, per_start) = config.multistart_split(1);
            let starts = multistart_init(|x: &[f64]| objective.cheap_value(x), bounds, candidates, n_starts, seed, par);
            let settings =
                LbfgsSettings { memory: config.lbfgs_memory, max_evals: per_start, ..LbfgsSettings::default() };
            let mut res = lbfgs_box(|x: &[f64]| objective.value_and_grad(x), &starts, bounds, &settings, par);
            res.evals_used += candidates;
            for t in &mut res.trace {
                t.evals += candidates;
            }
            res
        }
        OptimizerKind::Adam => {
            let (candidates, n_starts, per_start) = config.multistart_split(2);
            let starts = multistart_init(|x: &[f64]| objective.cheap_value(x), bounds, candidates, n_starts, seed, par);
            let steps = config.sgd_steps.min(per_start - 1);
            let settings = AdamSettings { steps, learning_rate: config.learning_rate, ..AdamSettings::default() };
            let mut res = adam_box(
                |x: &[f64], stream: u64, step: u64| objective.stochastic_value_and_grad(x, stream, step),
                |x: &[f64]| objective.rescore(x),
                &starts,
                bounds,
                &settings,
                par,
            );
            res.evals_used += candidates;
            for t in &mut res.trace {
                t.evals += candidates;
            }
            res
        }
    })
}
