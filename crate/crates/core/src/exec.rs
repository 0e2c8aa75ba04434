//! Data-parallel map with a sequential fallback.
//!
//! With the `parallel` feature (default) work fans out over the rayon
//! pool; without it, or with [`Execution::Sequential`], items run in order
//! on the calling thread. Results are always returned in input order so
//! downstream reductions are identical either way.

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Execution {
    Sequential,
    Parallel,
}

impl Default for Execution {
    fn default() -> Self {
        if cfg!(feature = "parallel") {
            Execution::Parallel
        } else {
            Execution::Sequential
        }
    }
}

impl Execution {
    pub fn map<T, U, F>(self, items: &[T], f: F) -> Vec<U>
    where
        T: Sync,
        U: Send,
        F: Fn(&T) -> U + Sync + Send,
    {
        match self {
            #[cfg(feature = "parallel")]
            Execution::Parallel => {
                use rayon::prelude::*;
                items.par_iter().map(f).collect()
            }
            _ => items.iter().map(f).collect(),
        }
    }

    pub fn map_indexed<U, F>(self, n: usize, f: F) -> Vec<U>
    where
        U: Send,
        F: Fn(usize) -> U + Sync + Send,
    {
        match self {
            #[cfg(feature = "parallel")]
            Execution::Parallel => {
                use rayon::prelude::*;
                (0..n).into_par_iter().map(f).collect()
            }
            _ => (0..n).map(f).collect(),
        }
    }
}

/// Execution for a requested worker count: 1 runs sequentially, 0 uses
/// every core, any other count sizes the global pool once.
pub fn with_threads(threads: usize) -> Execution {
    if threads == 1 {
        return Execution::Sequential;
    }
    #[cfg(feature = "parallel")]
    if threads > 1 {
        // the pool can only be sized once per process; later requests reuse it
        let _ = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global();
    }
    Execution::default()
}
