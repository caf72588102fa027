use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{sanitize, OptResult, SearchBox};
use crate::par::{map_indexed, Parallelism};

/// Evaluates exactly `budget` uniform draws from `bounds` and keeps the best
/// (lowest draw index on ties). The draws depend only on `seed`.
pub fn random_search(
    objective: impl Fn(&[f64]) -> f64 + Sync,
    bounds: &SearchBox,
    budget: usize,
    seed: u64,
    par: Parallelism,
) -> OptResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let points: Vec<Vec<f64>> = (0..budget).map(|_| bounds.sample(&mut rng)).collect();
    let values = map_indexed(par, budget, |i| sanitize(objective(&points[i])));
    let mut out = OptResult::empty();
    for (x, v) in points.iter().zip(values) {
        out.observe(x, v);
    }
    out
}
