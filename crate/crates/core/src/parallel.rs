//! Index-parallel mapping with a sequential fallback.
//!
//! Every data-parallel loop in the crate goes through `map_indexed`, so the
//! `parallel` feature is the single switch between rayon and plain iteration.
//! Output order is by index either way; callers that need reproducible
//! randomness derive a child RNG stream per index, so results do not depend
//! on thread count.

pub fn map_indexed<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        (0..n).into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..n).map(f).collect()
    }
}

/// Sequential variant kept unconditionally for benchmarks comparing the two.
pub fn map_indexed_seq<T, F>(n: usize, f: F) -> Vec<T>
where
    F: Fn(usize) -> T,
{
    (0..n).map(f).collect()
}
