//! Deterministic fan-out of independent runs.
//!
//! Results come back ordered by run index whatever the worker count, and each
//! run derives its randomness from its index alone, so output does not depend
//! on scheduling.

use rayon::prelude::*;

use crate::error::{Error, Result};

/// Evaluate `f(0..n)` on `workers` threads and return results in index order.
pub fn map_indexed<T, F>(n: usize, workers: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> Result<T> + Sync + Send,
{
    if workers <= 1 {
        return (0..n).map(f).collect();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Internal(format!("worker pool: {e}")))?;
    pool.install(|| (0..n).into_par_iter().map(f).collect())
}
