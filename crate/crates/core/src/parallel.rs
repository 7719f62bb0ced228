//! Data-parallel helpers.
//!
//! With the default `parallel` feature these fan work out over rayon; without
//! it they fall back to sequential loops with bit-identical results. The
//! always-sequential twins in [`seq`] stay available under either build so the
//! bench suite can compare the two paths directly.
//!
//! Reductions accumulate fixed-size chunks in index order, so results do not
//! depend on the number of worker threads.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Chunk length used by the ordered reductions.
pub const CHUNK: usize = 512;

/// Caps the worker pool. Has no effect after the first parallel call and is a
/// no-op in sequential builds.
pub fn configure_jobs(jobs: usize) {
    #[cfg(feature = "parallel")]
    if jobs > 0 {
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global();
    }
    #[cfg(not(feature = "parallel"))]
    let _ = jobs;
}

/// Always-sequential implementations; the parallel front ends delegate here
/// when the `parallel` feature is off, and benches call them directly.
pub mod seq {
    pub fn map_collect<T, U, F: Fn(&T) -> U>(items: &[T], f: F) -> Vec<U> {
        items.iter().map(f).collect()
    }

    pub fn map_range<U, F: Fn(usize) -> U>(n: usize, f: F) -> Vec<U> {
        (0..n).map(f).collect()
    }

    /// Sums `fill(chunk, acc)` contributions over fixed-size chunks of
    /// `items` into a dense vector of length `dim`.
    pub fn chunked_sum<T, F: Fn(&[T], &mut [f64])>(items: &[T], dim: usize, fill: F) -> Vec<f64> {
        let mut acc = vec![0.0; dim];
        let mut buf = vec![0.0; dim];
        for chunk in items.chunks(super::CHUNK) {
            buf.iter_mut().for_each(|x| *x = 0.0);
            fill(chunk, &mut buf);
            for (a, b) in acc.iter_mut().zip(&buf) {
                *a += *b;
            }
        }
        acc
    }
}

#[cfg(feature = "parallel")]
pub fn map_collect<T, U, F>(items: &[T], f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> U + Sync + Send,
{
    items.par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub fn map_collect<T, U, F>(items: &[T], f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> U + Sync + Send,
{
    seq::map_collect(items, f)
}

#[cfg(feature = "parallel")]
pub fn map_range<U, F>(n: usize, f: F) -> Vec<U>
where
    U: Send,
    F: Fn(usize) -> U + Sync + Send,
{
    (0..n).into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub fn map_range<U, F>(n: usize, f: F) -> Vec<U>
where
    U: Send,
    F: Fn(usize) -> U + Sync + Send,
{
    seq::map_range(n, f)
}

/// Parallel twin of [`seq::chunked_sum`]. Chunk partials are reduced in index
/// order, so the result matches the sequential path exactly.
#[cfg(feature = "parallel")]
pub fn chunked_sum<T, F>(items: &[T], dim: usize, fill: F) -> Vec<f64>
where
    T: Sync,
    F: Fn(&[T], &mut [f64]) + Sync + Send,
{
    let partials: Vec<Vec<f64>> = items
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut buf = vec![0.0; dim];
            fill(chunk, &mut buf);
            buf
        })
        .collect();
    let mut acc = vec![0.0; dim];
    for p in partials {
        for (a, b) in acc.iter_mut().zip(&p) {
            *a += *b;
        }
    }
    acc
}

#[cfg(not(feature = "parallel"))]
pub fn chunked_sum<T, F>(items: &[T], dim: usize, fill: F) -> Vec<f64>
where
    T: Sync,
    F: Fn(&[T], &mut [f64]) + Sync + Send,
{
    seq::chunked_sum(items, dim, fill)
}
