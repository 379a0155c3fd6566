//! Data-parallel execution over clusters and chains, with a sequential
//! fallback when the `parallel` feature is disabled or a single worker is
//! requested. Work is keyed by stable indices so results never depend on
//! scheduling.

use crate::error::Result;

/// A reusable worker handle. With the `parallel` feature and more than one
/// worker it owns a dedicated thread pool; otherwise every call runs on
/// the caller's thread.
pub struct WorkerPool {
    workers: usize,
    #[cfg(feature = "parallel")]
    pool: Option<rayon::ThreadPool>,
}

impl WorkerPool {
    pub fn new(workers: usize) -> Result<Self> {
        let workers = workers.max(1);
        #[cfg(feature = "parallel")]
        {
            let pool = if workers > 1 {
                Some(
                    rayon::ThreadPoolBuilder::new()
                        .num_threads(workers)
                        .build()
                        .map_err(|e| {
                            crate::error::SfcError::Config(format!(
                                "worker pool construction failed: {e}"
                            ))
                        })?,
                )
            } else {
                None
            };
            Ok(Self { workers, pool })
        }
        #[cfg(not(feature = "parallel"))]
        Ok(Self { workers })
    }

    /// Effective worker count (1 when running sequentially).
    pub fn workers(&self) -> usize {
        #[cfg(feature = "parallel")]
        {
            if self.pool.is_some() {
                return self.workers;
            }
        }
        let _ = self.workers;
        1
    }

    /// Applies `f` to every item. Errors are reported in item order
    /// regardless of scheduling.
    pub fn for_each_mut<T, F>(&self, items: &mut [T], f: F) -> Result<()>
    where
        T: Send,
        F: Fn(usize, &mut T) -> Result<()> + Sync,
    {
        #[cfg(feature = "parallel")]
        if let Some(pool) = &self.pool {
            use rayon::prelude::*;
            let results: Vec<Result<()>> = pool.install(|| {
                items
                    .par_iter_mut()
                    .enumerate()
                    .map(|(i, item)| f(i, item))
                    .collect()
            });
            return results.into_iter().collect();
        }
        for (i, item) in items.iter_mut().enumerate() {
            f(i, item)?;
        }
        Ok(())
    }

    /// Evaluates `f` at every index in `0..n`, returning results in index
    /// order.
    pub fn map_indexed<U, F>(&self, n: usize, f: F) -> Vec<U>
    where
        U: Send,
        F: Fn(usize) -> U + Sync,
    {
        #[cfg(feature = "parallel")]
        if let Some(pool) = &self.pool {
            use rayon::prelude::*;
            return pool.install(|| (0..n).into_par_iter().map(|i| f(i)).collect());
        }
        (0..n).map(f).collect()
    }
}
