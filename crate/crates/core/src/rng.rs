//! Seeded, splittable random streams and the sampling primitives built on them.
//!
//! Every randomized component draws from a ChaCha20 stream identified by
//! `(seed, stream id)`, so results do not depend on thread scheduling or on
//! the platform's native word size.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

pub type StreamRng = ChaCha20Rng;

/// Stream reserved for clustering inside the partitioners.
pub const CLUSTERING_STREAM: u64 = 0;

/// Stream of subset `index` during plan generation.
pub fn subset_stream(index: usize) -> u64 {
    index as u64 + 1
}

pub fn stream(seed: u64, stream_id: u64) -> StreamRng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(stream_id);
    rng
}

/// Uniform index in `0..n`. Sampled through `u64` so the draw sequence is the
/// same on 32- and 64-bit targets.
pub fn uniform_index<R: Rng + ?Sized>(rng: &mut R, n: usize) -> usize {
    assert!(n > 0, "uniform_index over an empty range");
    rng.random_range(0..n as u64) as usize
}

/// Uniform draw of `k` distinct items by partial Fisher-Yates shuffle.
///
/// The result preserves draw order; callers wanting set semantics sort it.
/// Panics if `k > items.len()`.
pub fn sample_without_replacement<T: Clone, R: Rng + ?Sized>(
    rng: &mut R,
    items: &[T],
    k: usize,
) -> Vec<T> {
    assert!(k <= items.len(), "cannot draw {k} of {} items", items.len());
    let mut pool: Vec<T> = items.to_vec();
    let n = pool.len();
    for i in 0..k {
        let j = i + uniform_index(rng, n - i);
        pool.swap(i, j);
    }
    pool.truncate(k);
    pool
}
