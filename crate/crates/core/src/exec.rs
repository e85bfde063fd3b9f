//! Deterministic parallel map over path indices.

use std::sync::Arc;

use rayon::prelude::*;

/// Runs per-path work on a dedicated thread pool.
///
/// Results are always collected in path-index order, so any reduction that
/// follows sees the same sequence regardless of the worker count.
#[derive(Clone)]
pub struct Executor {
    pool: Option<Arc<rayon::ThreadPool>>,
    workers: usize,
}

impl std::fmt::Debug for Executor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Executor").field("workers", &self.workers).finish()
    }
}

impl Default for Executor {
    fn default() -> Self {
        Self::serial()
    }
}

impl Executor {
    pub fn serial() -> Self {
        Self { pool: None, workers: 1 }
    }

    /// `workers = 0` uses rayon's default thread count.
    pub fn with_workers(workers: usize) -> Self {
        if workers == 1 {
            return Self::serial();
        }
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .expect("thread pool");
        let workers = pool.current_num_threads();
        Self { pool: Some(Arc::new(pool)), workers }
    }

    pub fn workers(&self) -> usize {
        self.workers
    }

    pub fn map<T, F>(&self, n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        match &self.pool {
            None => (0..n).map(f).collect(),
            Some(pool) => pool.install(|| (0..n).into_par_iter().map(f).collect()),
        }
    }
}
