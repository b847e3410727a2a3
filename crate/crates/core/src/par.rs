//! Fixed-shard fan-out with ordered reduction.
//!
//! Work is split into shards whose boundaries depend only on the problem
//! size, never on the thread count. Shard results come back in shard order
//! and callers fold them left to right, so a build with the `parallel`
//! feature produces the same bits as the sequential fallback.

use std::ops::Range;

/// Rows per shard for batched network evaluation.
pub const SHARD_ROWS: usize = 32;

/// Below this many items `map_indices` stays on the calling thread; the
/// dispatch overhead would dominate.
pub const MIN_PARALLEL_ITEMS: usize = 64;

fn shard_ranges(n: usize, shard: usize) -> Vec<Range<usize>> {
    let shard = shard.max(1);
    (0..n.div_ceil(shard))
        .map(|k| k * shard..((k + 1) * shard).min(n))
        .collect()
}

/// Evaluates `f` on consecutive ranges of `0..n`, results in range order.
pub fn map_shards<T, F>(n: usize, shard: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(Range<usize>) -> T + Sync + Send,
{
    let ranges = shard_ranges(n, shard);
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        ranges.into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        ranges.into_iter().map(f).collect()
    }
}

/// Evaluates `f(i)` for every `i` in `0..n`, results in index order.
pub fn map_indices<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if n >= MIN_PARALLEL_ITEMS {
        use rayon::prelude::*;
        return (0..n).into_par_iter().map(f).collect();
    }
    (0..n).map(f).collect()
}

/// Sum of `f(i)` over `0..n`, reduced shard by shard in index order.
pub fn sum_indices<F>(n: usize, shard: usize, f: F) -> f64
where
    F: Fn(usize) -> f64 + Sync + Send,
{
    map_shards(n, shard, |r| r.map(&f).sum::<f64>())
        .into_iter()
        .sum()
}

/// Whether this build fans work out across threads.
pub const fn is_parallel() -> bool {
    cfg!(feature = "parallel")
}
