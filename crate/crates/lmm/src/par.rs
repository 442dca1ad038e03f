//! Job execution: data-parallel over a rayon pool when the `parallel`
//! feature is on, plain sequential otherwise. Results come back in job
//! order either way, so downstream output is identical across modes and
//! thread counts.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Run `f` over `jobs`, preserving order.
#[cfg(feature = "parallel")]
pub fn run_jobs<T, R, F>(jobs: Vec<T>, f: F) -> Vec<R>
where
    T: Send,
    R: Send,
    F: Fn(T) -> R + Sync + Send,
{
    jobs.into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub fn run_jobs<T, R, F>(jobs: Vec<T>, f: F) -> Vec<R>
where
    F: Fn(T) -> R,
{
    jobs.into_iter().map(f).collect()
}

/// Always-sequential variant, kept for benchmarking against the pool.
pub fn run_jobs_sequential<T, R, F>(jobs: Vec<T>, f: F) -> Vec<R>
where
    F: Fn(T) -> R,
{
    jobs.into_iter().map(f).collect()
}
