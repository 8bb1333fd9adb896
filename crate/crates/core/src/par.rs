//! Sequential / data-parallel dispatch.
//!
//! Every kernel that loops over independent rows, branches or grid points
//! takes an [`Execution`]. With the `parallel` feature disabled the parallel
//! variant silently runs sequentially. Reductions always combine partial
//! results in index order, so results do not depend on the worker count.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
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
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Execution::Parallel
    }

    /// Evaluate `f` on `0..n` and return the results in index order.
    pub fn map_indexed<T, F>(self, n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if self.is_parallel() {
            return (0..n).into_par_iter().map(f).collect();
        }
        (0..n).map(f).collect()
    }

    /// Apply `f` to consecutive chunks of `data`, passing the chunk index.
    pub fn for_each_chunk<T, F>(self, data: &mut [T], chunk: usize, f: F)
    where
        T: Send,
        F: Fn(usize, &mut [T]) + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if self.is_parallel() {
            data.par_chunks_mut(chunk)
                .enumerate()
                .for_each(|(i, c)| f(i, c));
            return;
        }
        data.chunks_mut(chunk).enumerate().for_each(|(i, c)| f(i, c));
    }

    /// Apply `f` elementwise to two equally long slices, in parallel chunks
    /// when enabled.
    pub fn zip_apply<T, F>(self, a: &mut [T], b: &mut [T], f: F)
    where
        T: Send,
        F: Fn(&mut T, &mut T) + Sync + Send,
    {
        debug_assert_eq!(a.len(), b.len());
        #[cfg(feature = "parallel")]
        if self.is_parallel() && a.len() >= 4 * ZIP_CHUNK {
            a.par_chunks_mut(ZIP_CHUNK)
                .zip(b.par_chunks_mut(ZIP_CHUNK))
                .for_each(|(x, y)| x.iter_mut().zip(y).for_each(|(p, q)| f(p, q)));
            return;
        }
        a.iter_mut().zip(b).for_each(|(p, q)| f(p, q));
    }
}

#[cfg(feature = "parallel")]
const ZIP_CHUNK: usize = 4096;

/// Run `f` inside a dedicated pool with `threads` workers (0 = rayon default).
#[cfg(feature = "parallel")]
pub fn with_threads<R: Send>(threads: usize, f: impl FnOnce() -> R + Send) -> R {
    if threads == 0 {
        return f();
    }
    match rayon::ThreadPoolBuilder::new().num_threads(threads).build() {
        Ok(pool) => pool.install(f),
        Err(_) => f(),
    }
}

#[cfg(not(feature = "parallel"))]
pub fn with_threads<R: Send>(_threads: usize, f: impl FnOnce() -> R + Send) -> R {
    f()
}
