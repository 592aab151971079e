//! Data-parallel helpers with a sequential fallback.
//!
//! With the `parallel` feature (default) these dispatch to rayon; without it they
//! run on the calling thread. Reductions are always evaluated over fixed-size
//! chunks and combined in chunk order, so results are bit-identical regardless
//! of the thread count.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Elements per reduction chunk. Fixed so the summation order never depends on
/// how work is scheduled.
pub const REDUCE_CHUNK: usize = 2048;

/// Calls `f(index, item)` for every element of `data`.
pub fn for_each_mut<T, F>(data: &mut [T], f: F)
where
    T: Send,
    F: Fn(usize, &mut T) + Sync + Send,
{
    #[cfg(feature = "parallel")]
    data.par_iter_mut().enumerate().for_each(|(i, v)| f(i, v));
    #[cfg(not(feature = "parallel"))]
    data.iter_mut().enumerate().for_each(|(i, v)| f(i, v));
}

/// Calls `f(chunk_index, chunk)` for consecutive chunks of `chunk_len` elements.
pub fn for_each_chunk_mut<T, F>(data: &mut [T], chunk_len: usize, f: F)
where
    T: Send,
    F: Fn(usize, &mut [T]) + Sync + Send,
{
    assert!(chunk_len > 0, "chunk length must be positive");
    #[cfg(feature = "parallel")]
    data.par_chunks_mut(chunk_len)
        .enumerate()
        .for_each(|(i, c)| f(i, c));
    #[cfg(not(feature = "parallel"))]
    data.chunks_mut(chunk_len)
        .enumerate()
        .for_each(|(i, c)| f(i, c));
}

/// Builds a vector of `len` elements where element `i` is `f(i)`.
pub fn map_indexed<T, F>(len: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        (0..len).into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..len).map(f).collect()
    }
}

/// Deterministic sum of `f(i)` for `i in 0..len`.
pub fn sum<F>(len: usize, f: F) -> f64
where
    F: Fn(usize) -> f64 + Sync + Send,
{
    let chunks = len.div_ceil(REDUCE_CHUNK);
    let partial = map_indexed(chunks, |c| {
        let start = c * REDUCE_CHUNK;
        let end = (start + REDUCE_CHUNK).min(len);
        (start..end).map(&f).sum::<f64>()
    });
    partial.into_iter().sum()
}

/// Deterministic dot product.
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    sum(a.len(), |i| a[i] * b[i])
}

/// Deterministic chunked fold: each chunk of indices is folded into its own
/// accumulator starting from `init()`, then chunks are merged in order.
pub fn fold_chunks<A, I, F, M>(len: usize, chunk_len: usize, init: I, fold: F, merge: M) -> A
where
    A: Send,
    I: Fn() -> A + Sync + Send,
    F: Fn(&mut A, usize) + Sync + Send,
    M: Fn(&mut A, A),
{
    let chunks = len.div_ceil(chunk_len.max(1));
    let partial = map_indexed(chunks, |c| {
        let mut acc = init();
        let start = c * chunk_len;
        let end = (start + chunk_len).min(len);
        for i in start..end {
            fold(&mut acc, i);
        }
        acc
    });
    let mut total = init();
    for p in partial {
        merge(&mut total, p);
    }
    total
}

/// Runs `f` with at most `threads` worker threads. Without the `parallel`
/// feature this simply calls `f`.
pub fn with_threads<R: Send>(threads: usize, f: impl FnOnce() -> R + Send) -> R {
    #[cfg(feature = "parallel")]
    {
        match rayon::ThreadPoolBuilder::new()
            .num_threads(threads.max(1))
            .build()
        {
            Ok(pool) => pool.install(f),
            Err(err) => {
                log::warn!("could not build a {threads}-thread pool ({err}); using the global pool");
                f()
            }
        }
    }
    #[cfg(not(feature = "parallel"))]
    {
        let _ = threads;
        f()
    }
}

/// Caps the global worker pool at `threads`. Has no effect once the pool has
/// been used or without the `parallel` feature.
pub fn init_global(threads: usize) {
    #[cfg(feature = "parallel")]
    {
        if let Err(err) = rayon::ThreadPoolBuilder::new().num_threads(threads.max(1)).build_global() {
            log::warn!("global pool already initialized: {err}");
        }
    }
    #[cfg(not(feature = "parallel"))]
    {
        let _ = threads;
    }
}

/// Number of worker threads currently available.
pub fn current_threads() -> usize {
    #[cfg(feature = "parallel")]
    {
        rayon::current_num_threads()
    }
    #[cfg(not(feature = "parallel"))]
    {
        1
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_is_independent_of_thread_count() {
        let values: Vec<f64> = (0..10_007).map(|i| ((i as f64) * 0.37).sin() * 1e3).collect();
        let one = with_threads(1, || sum(values.len(), |i| values[i]));
        let four = with_threads(4, || sum(values.len(), |i| values[i]));
        assert_eq!(one.to_bits(), four.to_bits());
    }

    #[test]
    fn chunks_cover_everything_once() {
        let mut v = vec![0u32; 1000];
        for_each_chunk_mut(&mut v, 7, |_, c| c.iter_mut().for_each(|x| *x += 1));
        assert!(v.iter().all(|&x| x == 1));
    }
}
