//! Data-parallel helpers.
//!
//! Monte Carlo studies, higher-criticism repetitions and sweep points are
//! independent units of work indexed by an integer. Every unit derives its own
//! random stream from its index, so results do not depend on scheduling and
//! the parallel and sequential paths produce identical output.
//!
//! With the `parallel` feature (default) work is spread over the rayon global
//! pool; without it everything runs on the calling thread.

/// How to execute a batch of independent work items.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Exec {
    Sequential,
    Parallel,
}

impl Default for Exec {
    fn default() -> Self {
        if cfg!(feature = "parallel") {
            Exec::Parallel
        } else {
            Exec::Sequential
        }
    }
}

/// Evaluates `f(0..n)` and returns the results in index order.
pub fn map_range<T, F>(exec: Exec, n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    match exec {
        Exec::Sequential => (0..n).map(f).collect(),
        Exec::Parallel => parallel_map(n, f),
    }
}

/// Like [`map_range`] for fallible work; the first error in index order wins.
pub fn try_map_range<T, E, F>(exec: Exec, n: usize, f: F) -> Result<Vec<T>, E>
where
    T: Send,
    E: Send,
    F: Fn(usize) -> Result<T, E> + Sync + Send,
{
    map_range(exec, n, f).into_iter().collect()
}

#[cfg(feature = "parallel")]
fn parallel_map<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    use rayon::prelude::*;
    (0..n).into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
fn parallel_map<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    (0..n).map(f).collect()
}

/// Caps the global pool. Has no effect without the `parallel` feature or if
/// the pool was already initialized.
pub fn init_threads(threads: usize) {
    #[cfg(feature = "parallel")]
    {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(threads.max(1))
            .build_global()
        {
            log::debug!("thread pool already initialized: {e}");
        }
    }
    #[cfg(not(feature = "parallel"))]
    let _ = threads;
}
