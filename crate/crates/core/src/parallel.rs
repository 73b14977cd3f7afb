//! Order-preserving map over independent jobs.
//!
//! With the `parallel` feature the jobs run on a rayon pool; without it (or
//! with `threads == Some(1)`) they run in order on the calling thread. Results
//! always come back in input order, so outputs do not depend on scheduling.

/// Maps `f` over `items` (with their index) and returns results in input order.
///
/// `threads` bounds the worker pool; `None` uses rayon's global pool.
pub fn map_indexed<T, R, F>(items: Vec<T>, threads: Option<usize>, f: F) -> Vec<R>
where
    T: Send,
    R: Send,
    F: Fn(usize, T) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        if threads != Some(1) && items.len() > 1 {
            return parallel_map(items, threads, f);
        }
    }
    let _ = threads;
    sequential_map(items, f)
}

/// Always sequential; used as the reference path.
pub fn sequential_map<T, R, F>(items: Vec<T>, f: F) -> Vec<R>
where
    F: Fn(usize, T) -> R,
{
    items.into_iter().enumerate().map(|(i, t)| f(i, t)).collect()
}

#[cfg(feature = "parallel")]
fn parallel_map<T, R, F>(items: Vec<T>, threads: Option<usize>, f: F) -> Vec<R>
where
    T: Send,
    R: Send,
    F: Fn(usize, T) -> R + Sync + Send,
{
    use rayon::prelude::*;
    let run = || items.into_par_iter().enumerate().map(|(i, t)| f(i, t)).collect();
    match threads {
        Some(n) => match rayon::ThreadPoolBuilder::new().num_threads(n).build() {
            Ok(pool) => pool.install(run),
            Err(_) => run(),
        },
        None => run(),
    }
}

/// Whether this build can run jobs concurrently.
pub const fn is_parallel() -> bool {
    cfg!(feature = "parallel")
}
