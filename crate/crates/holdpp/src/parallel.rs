//! Deterministic chunked map over work items.
//!
//! Work is split into fixed-size chunks processed independently (with rayon
//! when the `parallel` feature is on) and the per-chunk results are combined
//! in chunk order, so the parallel and sequential paths produce bitwise
//! identical results.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Applies `f` to each fixed-size chunk of `items` and returns the results
/// in chunk order. `parallel` only has an effect when the feature is
/// compiled in; the chunk boundaries never depend on it.
pub fn map_chunks<T, R, F>(items: &[T], chunk: usize, parallel: bool, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&[T]) -> R + Sync,
{
    assert!(chunk > 0);
    #[cfg(feature = "parallel")]
    if parallel {
        return items.par_chunks(chunk).map(|c| f(c)).collect();
    }
    #[cfg(not(feature = "parallel"))]
    let _ = parallel;
    items.chunks(chunk).map(|c| f(c)).collect()
}

/// True when the crate was built with the rayon-backed path.
pub fn parallel_enabled() -> bool {
    cfg!(feature = "parallel")
}
