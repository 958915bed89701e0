//! Deterministic data-parallel helpers.
//!
//! Work is always split into chunks of a fixed size that depends only on the
//! problem size, never on the worker count. Chunk results are combined in
//! chunk order, so the floating-point result of a reduction is the same with
//! one thread, many threads, or the sequential fallback.

use std::ops::Range;

/// Default number of items per chunk for per-observation loops.
pub const CHUNK: usize = 64;

/// Splits `0..n` into consecutive ranges of at most `chunk` items.
pub fn chunk_ranges(n: usize, chunk: usize) -> Vec<Range<usize>> {
    let chunk = chunk.max(1);
    (0..n.div_ceil(chunk))
        .map(|c| c * chunk..((c + 1) * chunk).min(n))
        .collect()
}

/// Sequential reference implementations, always compiled.
pub mod seq {
    use std::ops::Range;

    pub fn map_chunks<R, F>(n: usize, chunk: usize, f: F) -> Vec<R>
    where
        F: Fn(Range<usize>) -> R,
    {
        super::chunk_ranges(n, chunk).into_iter().map(f).collect()
    }

    pub fn for_each_chunk_mut<T, F>(out: &mut [T], chunk: usize, f: F)
    where
        F: Fn(usize, &mut [T]),
    {
        for (c, block) in out.chunks_mut(chunk.max(1)).enumerate() {
            f(c, block);
        }
    }

    pub fn map<R, F>(n: usize, f: F) -> Vec<R>
    where
        F: Fn(usize) -> R,
    {
        (0..n).map(f).collect()
    }
}

/// Maps `f` over the fixed chunking of `0..n`, returning results in chunk order.
#[cfg(feature = "parallel")]
pub fn map_chunks<R, F>(n: usize, chunk: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(Range<usize>) -> R + Sync + Send,
{
    use rayon::prelude::*;
    chunk_ranges(n, chunk).into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub fn map_chunks<R, F>(n: usize, chunk: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(Range<usize>) -> R + Sync + Send,
{
    seq::map_chunks(n, chunk, f)
}

/// Calls `f(chunk_index, block)` on every `chunk`-sized block of `out`.
#[cfg(feature = "parallel")]
pub fn for_each_chunk_mut<T, F>(out: &mut [T], chunk: usize, f: F)
where
    T: Send,
    F: Fn(usize, &mut [T]) + Sync + Send,
{
    use rayon::prelude::*;
    out.par_chunks_mut(chunk.max(1))
        .enumerate()
        .for_each(|(c, block)| f(c, block));
}

#[cfg(not(feature = "parallel"))]
pub fn for_each_chunk_mut<T, F>(out: &mut [T], chunk: usize, f: F)
where
    T: Send,
    F: Fn(usize, &mut [T]) + Sync + Send,
{
    seq::for_each_chunk_mut(out, chunk, f)
}

/// Maps `f` over `0..n` (one task per index), results in index order.
#[cfg(feature = "parallel")]
pub fn map<R, F>(n: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    use rayon::prelude::*;
    (0..n).into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub fn map<R, F>(n: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    seq::map(n, f)
}

/// Sums equally sized vectors elementwise, in order.
pub fn sum_in_order(parts: Vec<Vec<f64>>) -> Vec<f64> {
    let mut it = parts.into_iter();
    let Some(mut acc) = it.next() else {
        return Vec::new();
    };
    for part in it {
        for (a, b) in acc.iter_mut().zip(&part) {
            *a += b;
        }
    }
    acc
}

/// Runs `f` inside a rayon pool with `threads` workers (0 = rayon default).
/// Without the `parallel` feature this just calls `f`.
pub fn with_threads<R: Send>(threads: usize, f: impl FnOnce() -> R + Send) -> R {
    #[cfg(feature = "parallel")]
    {
        if threads > 0 {
            if let Ok(pool) = rayon::ThreadPoolBuilder::new().num_threads(threads).build() {
                return pool.install(f);
            }
        }
        f()
    }
    #[cfg(not(feature = "parallel"))]
    {
        let _ = threads;
        f()
    }
}
