use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::linalg::Matrix;
use crate::par::derive_seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum SamplePolicy {
    /// One block reused for every evaluation (common random numbers).
    Fixed,
    /// A fresh block per optimizer step, derived from `(seed, stream, step)`.
    Resampled,
}

/// An `n × q` block of standard-normal base samples.
#[derive(Debug, Clone, PartialEq)]
pub struct BaseSampleBlock {
    z: Matrix,
    pub policy: SamplePolicy,
    pub seed: u64,
}

fn normal_matrix(n: usize, q: usize, seed: u64) -> Matrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Matrix::from_fn(n, q, |_, _| StandardNormal.sample(&mut rng))
}

impl BaseSampleBlock {
    pub fn fixed(n: usize, q: usize, seed: u64) -> Self {
        Self { z: normal_matrix(n, q, seed), policy: SamplePolicy::Fixed, seed }
    }

    /// The block drawn for step `step` of stream `stream` under resampling.
    pub fn resampled(n: usize, q: usize, seed: u64, stream: u64, step: u64) -> Self {
        let s = derive_seed(seed, &[stream, step]);
        Self { z: normal_matrix(n, q, s), policy: SamplePolicy::Resampled, seed }
    }

    /// A fixed block closed under column swaps for `q = 2`: rows `2k` and
    /// `2k + 1` are mirror images. `n` is rounded up to an even count.
    pub fn symmetrized_pairs(n: usize, seed: u64) -> Self {
        let half = n.div_ceil(2);
        let base = normal_matrix(half, 2, seed);
        let z = Matrix::from_fn(2 * half, 2, |r, c| {
            let src = r / 2;
            if r % 2 == 0 {
                base[(src, c)]
            } else {
                base[(src, 1 - c)]
            }
        });
        Self { z, policy: SamplePolicy::Fixed, seed }
    }

    pub fn from_matrix(z: Matrix, policy: SamplePolicy, seed: u64) -> Self {
        Self { z, policy, seed }
    }

    pub fn z(&self) -> &Matrix {
        &self.z
    }

    pub fn n(&self) -> usize {
        self.z.rows()
    }

    pub fn q(&self) -> usize {
        self.z.cols()
    }

    pub fn row(&self, k: usize) -> &[f64] {
        self.z.row(k)
    }

    /// Column `j` of the result is column `perm[j]` of this block.
    pub fn permute_columns(&self, perm: &[usize]) -> Self {
        Self { z: self.z.permute_cols(perm), policy: self.policy, seed: self.seed }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixed_blocks_are_reproducible() {
        assert_eq!(BaseSampleBlock::fixed(16, 3, 9), BaseSampleBlock::fixed(16, 3, 9));
        assert_ne!(BaseSampleBlock::fixed(16, 3, 9), BaseSampleBlock::fixed(16, 3, 10));
    }

    #[test]
    fn resampled_blocks_vary_by_step() {
        let a = BaseSampleBlock::resampled(8, 2, 1, 0, 0);
        let b = BaseSampleBlock::resampled(8, 2, 1, 0, 1);
        assert_ne!(a.z(), b.z());
        assert_eq!(a, BaseSampleBlock::resampled(8, 2, 1, 0, 0));
    }

    #[test]
    fn symmetrized_block_is_closed_under_swap() {
        let b = BaseSampleBlock::symmetrized_pairs(7, 3);
        assert_eq!(b.n(), 8);
        for k in 0..4 {
            assert_eq!(b.row(2 * k)[0], b.row(2 * k + 1)[1]);
            assert_eq!(b.row(2 * k)[1], b.row(2 * k + 1)[0]);
        }
    }
}
