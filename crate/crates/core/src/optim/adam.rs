use super::{sanitize, OptResult, SearchBox};
use crate::par::{map_indexed, Parallelism};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamSettings {
    pub steps: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamSettings {
    fn default() -> Self {
        Self { steps: 1024, learning_rate: 0.01, beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }
}

/// Projected Adam ascent from every start. `stochastic_grad(x, stream, step)`
/// returns a value/gradient estimate, with `stream` the start index. Each
/// start's final iterate is re-scored with `rescore`, and the best re-scored
/// iterate is returned.
///
/// Evaluations count every gradient call plus the final re-score.
pub fn adam_box(
    stochastic_grad: impl Fn(&[f64], u64, u64) -> (f64, Vec<f64>) + Sync,
    rescore: impl Fn(&[f64]) -> f64 + Sync,
    starts: &[Vec<f64>],
    bounds: &SearchBox,
    settings: &AdamSettings,
    par: Parallelism,
) -> OptResult {
    let runs = map_indexed(par, starts.len(), |i| {
        let mut x = starts[i].clone();
        bounds.project(&mut x);
        let n = x.len();
        let mut m = vec![0.0; n];
        let mut v = vec![0.0; n];
        let (b1, b2) = (settings.beta1, settings.beta2);
        for step in 0..settings.steps {
            let (_, g) = stochastic_grad(&x, i as u64, step as u64);
            if g.iter().any(|c| !c.is_finite()) {
                continue;
            }
            let t = (step + 1) as i32;
            let c1 = 1.0 - b1.powi(t);
            let c2 = 1.0 - b2.powi(t);
            for k in 0..n {
                m[k] = b1 * m[k] + (1.0 - b1) * g[k];
                v[k] = b2 * v[k] + (1.0 - b2) * g[k] * g[k];
                x[k] += settings.learning_rate * (m[k] / c1) / ((v[k] / c2).sqrt() + settings.epsilon);
            }
            bounds.project(&mut x);
        }
        let mut out = OptResult::empty();
        out.evals_used = settings.steps;
        out.observe(&x, sanitize(rescore(&x)));
        out
    });
    OptResult::merge(runs)
}
