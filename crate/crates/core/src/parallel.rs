//! Node-parallel evaluation within a time slice.
//!
//! Every map collects results in index order, so output never depends on
//! the number of workers or on scheduling.

use rayon::prelude::*;
use rayon::ThreadPool;

/// Environment variable overriding the worker count.
pub const WORKERS_ENV: &str = "BSDE_WORKERS";

/// Worker count: explicit request, else the environment, else rayon's default.
pub fn resolve_workers(requested: Option<usize>) -> usize {
    requested
        .filter(|&w| w > 0)
        .or_else(|| {
            std::env::var(WORKERS_ENV)
                .ok()
                .and_then(|v| v.trim().parse::<usize>().ok())
                .filter(|&w| w > 0)
        })
        .unwrap_or_else(rayon::current_num_threads)
}

pub struct Workers {
    pool: Option<ThreadPool>,
}

impl Workers {
    pub fn new(requested: Option<usize>) -> Self {
        let n = resolve_workers(requested);
        let pool = (n > 1)
            .then(|| rayon::ThreadPoolBuilder::new().num_threads(n).build().ok())
            .flatten();
        Self { pool }
    }

    pub fn count(&self) -> usize {
        self.pool.as_ref().map_or(1, |p| p.current_num_threads())
    }

    /// `(0..n).map(f)` collected in order.
    pub fn map<T, F>(&self, n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        match &self.pool {
            Some(pool) if n > 64 => pool.install(|| (0..n).into_par_iter().map(&f).collect()),
            _ => (0..n).map(f).collect(),
        }
    }

    /// Runs `f` on consecutive index ranges of length `chunk` covering
    /// `0..n` and returns the per-range results in order.
    pub fn map_chunks<T, F>(&self, n: usize, chunk: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(std::ops::Range<usize>) -> T + Sync + Send,
    {
        let chunk = chunk.max(1);
        let count = n.div_ceil(chunk);
        let range = |c: usize| c * chunk..((c + 1) * chunk).min(n);
        match &self.pool {
            Some(pool) if count > 1 => pool.install(|| (0..count).into_par_iter().map(|c| f(range(c))).collect()),
            _ => (0..count).map(|c| f(range(c))).collect(),
        }
    }
}
