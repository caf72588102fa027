use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{sanitize, SearchBox};
use crate::par::{derive_seed, map_indexed, Parallelism};

/// Draws `n_candidates` uniform points, scores them with `cheap_objective`,
/// and samples `n_starts` of them without replacement with probability
/// proportional to `exp(value / T)`, `T` being the sample standard deviation
/// of the finite scores (1 when that is zero or undefined).
///
/// Sampling uses the Gumbel-top-k construction, which draws successive
/// picks from the renormalized Boltzmann weights of the remaining
/// candidates. Starts are returned in pick order.
pub fn multistart_init(
    cheap_objective: impl Fn(&[f64]) -> f64 + Sync,
    bounds: &SearchBox,
    n_candidates: usize,
    n_starts: usize,
    seed: u64,
    par: Parallelism,
) -> Vec<Vec<f64>> {
    let n_starts = n_starts.min(n_candidates);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let candidates: Vec<Vec<f64>> = (0..n_candidates).map(|_| bounds.sample(&mut rng)).collect();
    let scores = map_indexed(par, n_candidates, |i| sanitize(cheap_objective(&candidates[i])));
    let temperature = boltzmann_temperature(&scores);
    let mut gumbel = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[1]));
    let mut keys: Vec<(f64, usize)> = scores
        .iter()
        .enumerate()
        .map(|(i, &s)| {
            let u: f64 = gumbel.random::<f64>().max(f64::MIN_POSITIVE);
            (s / temperature - (-u.ln()).ln(), i)
        })
        .collect();
    keys.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    keys.iter().take(n_starts).map(|&(_, i)| candidates[i].clone()).collect()
}

pub(crate) fn boltzmann_temperature(scores: &[f64]) -> f64 {
    let finite: Vec<f64> = scores.iter().copied().filter(|v| v.is_finite()).collect();
    if finite.len() < 2 {
        return 1.0;
    }
    let n = finite.len() as f64;
    let mean = finite.iter().sum::<f64>() / n;
    let var = finite.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let sd = var.sqrt();
    if sd > 0.0 && sd.is_finite() {
        sd
    } else {
        1.0
    }
}
