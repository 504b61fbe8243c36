//! Execution strategy for the data-parallel loops (chains, simulated
//! individuals, pointwise likelihood cells, CIF draws, E-step rows).
//!
//! `Parallel` uses rayon when the `parallel` feature is enabled and silently
//! degrades to `Sequential` otherwise. Both strategies return results in
//! index order and every work item draws from its own RNG stream, so the
//! output is bit-identical either way.

use serde::{Deserialize, Serialize};

use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Execution {
    Sequential,
    #[default]
    Parallel,
}

impl Execution {
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Execution::Parallel
    }

    pub fn map<T, F>(self, n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if self.is_parallel() {
            use rayon::prelude::*;
            return (0..n).into_par_iter().map(f).collect();
        }
        (0..n).map(f).collect()
    }

    pub fn try_map<T, F>(self, n: usize, f: F) -> Result<Vec<T>>
    where
        T: Send,
        F: Fn(usize) -> Result<T> + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if self.is_parallel() {
            use rayon::prelude::*;
            return (0..n).into_par_iter().map(f).collect();
        }
        (0..n).map(f).collect()
    }

    /// Mutates every item in place; the first error (in index order) wins.
    pub fn try_for_each_mut<T, F>(self, items: &mut [T], f: F) -> Result<()>
    where
        T: Send,
        F: Fn(usize, &mut T) -> Result<()> + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if self.is_parallel() {
            use rayon::prelude::*;
            let results: Vec<Result<()>> = items
                .par_iter_mut()
                .enumerate()
                .map(|(i, item)| f(i, item))
                .collect();
            return results.into_iter().collect();
        }
        for (i, item) in items.iter_mut().enumerate() {
            f(i, item)?;
        }
        Ok(())
    }
}

/// Caps the global worker count. Has no effect without the `parallel` feature
/// or when the pool was already initialised.
pub fn set_thread_limit(threads: usize) {
    #[cfg(feature = "parallel")]
    {
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(threads.max(1))
            .build_global();
    }
    #[cfg(not(feature = "parallel"))]
    let _ = threads;
}
