//! Deterministic data-parallel helpers.
//!
//! Work is always split into fixed-size chunks and partial results are
//! combined in chunk order, so floating-point reductions are bit-identical
//! whether they run on the rayon pool or sequentially (the `parallel`
//! feature disabled).

use std::ops::Range;

/// Rows per work unit for row-sharded reductions.
pub const ROW_CHUNK: usize = 1024;

fn chunk_ranges(len: usize, chunk: usize) -> Vec<Range<usize>> {
    (0..len.div_ceil(chunk))
        .map(|c| c * chunk..((c + 1) * chunk).min(len))
        .collect()
}

/// Apply `f` to each fixed-size chunk of `0..len`, returning results in chunk order.
pub fn map_chunks<T, F>(len: usize, chunk: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(Range<usize>) -> T + Sync + Send,
{
    let ranges = chunk_ranges(len, chunk.max(1));
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

/// Apply `f` to every index in `0..len`, returning results in index order.
pub fn map_indices<T, F>(len: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        (0..len).into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..len).map(f).collect()
    }
}

/// Whether this build runs data-parallel loops on the rayon pool.
pub fn is_parallel() -> bool {
    cfg!(feature = "parallel")
}

/// Number of worker threads available to the data-parallel loops.
pub fn threads() -> usize {
    #[cfg(feature = "parallel")]
    {
        rayon::current_num_threads()
    }
    #[cfg(not(feature = "parallel"))]
    {
        1
    }
}
