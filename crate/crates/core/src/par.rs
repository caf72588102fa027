//! Data-parallel helpers with a sequential fallback.
//!
//! Every reduction here has a fixed combination tree that depends only on the
//! input length, so results are bit-identical between [`Parallelism::Sequential`]
//! and [`Parallelism::Rayon`] and independent of the number of worker threads.
//! Building without the `parallel` feature turns `Rayon` into an alias for the
//! sequential path.

use serde::{Deserialize, Serialize};

/// Below this many leaves a subtree is reduced on the current thread.
const SPLIT_THRESHOLD: usize = 512;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Parallelism {
    Sequential,
    Rayon,
}

impl Default for Parallelism {
    fn default() -> Self {
        if cfg!(feature = "parallel") {
            Parallelism::Rayon
        } else {
            Parallelism::Sequential
        }
    }
}

impl Parallelism {
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Parallelism::Rayon
    }
}

/// Maps `f` over `0..n`, preserving index order in the output.
pub fn map_indexed<T, F>(par: Parallelism, n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if par.is_parallel() {
        use rayon::prelude::*;
        return (0..n).into_par_iter().map(f).collect();
    }
    let _ = par;
    (0..n).map(f).collect()
}

/// Maps `f` over a slice, preserving order.
pub fn map_slice<S, T, F>(par: Parallelism, items: &[S], f: F) -> Vec<T>
where
    S: Sync,
    T: Send,
    F: Fn(&S) -> T + Sync + Send,
{
    map_indexed(par, items.len(), |i| f(&items[i]))
}

/// Pairwise tree reduction over `0..n`.
///
/// Leaves `2k` and `2k + 1` are always combined first, and every split point
/// is even. `combine` must be associative up to rounding; the tree shape is a
/// function of `n` alone. Returns `None` when `n == 0`.
pub fn tree_reduce<A, L, C>(par: Parallelism, n: usize, leaf: L, combine: C) -> Option<A>
where
    A: Send,
    L: Fn(usize) -> A + Sync + Send,
    C: Fn(A, A) -> A + Sync + Send,
{
    if n == 0 {
        return None;
    }
    Some(reduce_range(par, 0, n, &leaf, &combine))
}

fn split_point(len: usize) -> usize {
    (len / 2 + 1) & !1
}

fn reduce_range<A, L, C>(par: Parallelism, lo: usize, hi: usize, leaf: &L, combine: &C) -> A
where
    A: Send,
    L: Fn(usize) -> A + Sync + Send,
    C: Fn(A, A) -> A + Sync + Send,
{
    let len = hi - lo;
    match len {
        1 => leaf(lo),
        2 => combine(leaf(lo), leaf(lo + 1)),
        _ => {
            let mid = lo + split_point(len);
            let (a, b) = join(
                par.is_parallel() && len > SPLIT_THRESHOLD,
                || reduce_range(par, lo, mid, leaf, combine),
                || reduce_range(par, mid, hi, leaf, combine),
            );
            combine(a, b)
        }
    }
}

fn join<A, B, FA, FB>(parallel: bool, fa: FA, fb: FB) -> (A, B)
where
    A: Send,
    B: Send,
    FA: FnOnce() -> A + Send,
    FB: FnOnce() -> B + Send,
{
    #[cfg(feature = "parallel")]
    if parallel {
        return rayon::join(fa, fb);
    }
    let _ = parallel;
    (fa(), fb())
}

/// Deterministic seed derivation (splitmix64 over a path of integers).
pub fn derive_seed(base: u64, path: &[u64]) -> u64 {
    let mut state = base ^ 0x6A09_E667_F3BC_C909;
    for &p in path {
        state = splitmix64(state ^ splitmix64(p.wrapping_add(0x9E37_79B9_7F4A_7C15)));
    }
    splitmix64(state)
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tree_reduce_matches_between_modes() {
        let leaf = |i: usize| ((i as f64) * 0.37).sin() * 1e3;
        for n in [1, 2, 3, 7, 511, 512, 513, 4097] {
            let a = tree_reduce(Parallelism::Sequential, n, leaf, |x, y| x + y).unwrap();
            let b = tree_reduce(Parallelism::Rayon, n, leaf, |x, y| x + y).unwrap();
            assert_eq!(a.to_bits(), b.to_bits(), "n = {n}");
        }
        assert!(tree_reduce(Parallelism::Sequential, 0, leaf, |x, y| x + y).is_none());
    }

    #[test]
    fn leaves_pair_consecutively() {
        // Record the structure as a string; leaves 0/1 and 2/3 must be siblings.
        let s = tree_reduce(Parallelism::Sequential, 6, |i| i.to_string(), |a, b| format!("({a} {b})")).unwrap();
        assert_eq!(s, "(((0 1) (2 3)) (4 5))");
    }

    #[test]
    fn map_indexed_preserves_order() {
        let v = map_indexed(Parallelism::Rayon, 1000, |i| i * 2);
        assert!(v.iter().enumerate().all(|(i, &x)| x == 2 * i));
    }

    #[test]
    fn derive_seed_is_path_sensitive() {
        assert_eq!(derive_seed(1, &[2, 3]), derive_seed(1, &[2, 3]));
        assert_ne!(derive_seed(1, &[2, 3]), derive_seed(1, &[3, 2]));
        assert_ne!(derive_seed(1, &[2]), derive_seed(2, &[2]));
    }
}
