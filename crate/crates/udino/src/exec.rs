//! Execution helpers for the data-parallel inner loops.
//!
//! With the `parallel` feature (default) the maps run on rayon; without it
//! they run sequentially. Output order always matches input order and all
//! reductions happen sequentially over that ordered output, so both builds
//! produce bit-identical results.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Map over a slice, preserving order.
#[cfg(feature = "parallel")]
pub fn map_ordered<I, R, F>(items: &[I], f: F) -> Vec<R>
where
    I: Sync,
    R: Send,
    F: Fn(usize, &I) -> R + Sync + Send,
{
    items.par_iter().enumerate().map(|(i, x)| f(i, x)).collect()
}

#[cfg(not(feature = "parallel"))]
pub fn map_ordered<I, R, F>(items: &[I], f: F) -> Vec<R>
where
    F: Fn(usize, &I) -> R,
{
    items.iter().enumerate().map(|(i, x)| f(i, x)).collect()
}

/// Map over `0..n`, preserving order.
#[cfg(feature = "parallel")]
pub fn map_indices<R, F>(n: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    (0..n).into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub fn map_indices<R, F>(n: usize, f: F) -> Vec<R>
where
    F: Fn(usize) -> R,
{
    (0..n).map(f).collect()
}

/// Always-sequential variant, kept for benchmarks that compare against the
/// parallel path within a single build.
pub fn map_indices_serial<R, F>(n: usize, f: F) -> Vec<R>
where
    F: Fn(usize) -> R,
{
    (0..n).map(f).collect()
}

/// Limit the rayon worker pool. Call before any parallel work; later calls
/// are ignored. A no-op in sequential builds.
pub fn configure_threads(n: usize) {
    #[cfg(feature = "parallel")]
    {
        if n > 0 {
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
        }
    }
    #[cfg(not(feature = "parallel"))]
    {
        let _ = n;
    }
}
