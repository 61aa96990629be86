//! Indexed map over a work range, run on a rayon pool or inline.
//!
//! Results always come back in index order, so output never depends on the
//! execution mode or the pool size.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Execution {
    Sequential,
    /// `jobs = 0` uses the global pool.
    Parallel { jobs: usize },
}

impl Default for Execution {
    fn default() -> Self {
        if cfg!(feature = "parallel") {
            Execution::Parallel { jobs: 0 }
        } else {
            Execution::Sequential
        }
    }
}

impl Execution {
    /// `--jobs` semantics: 1 runs inline, anything else uses a pool.
    pub fn from_jobs(jobs: usize) -> Self {
        if jobs == 1 || !cfg!(feature = "parallel") {
            Execution::Sequential
        } else {
            Execution::Parallel { jobs }
        }
    }
}

pub fn map_indexed<T, F>(n: usize, exec: Execution, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    match exec {
        Execution::Sequential => (0..n).map(f).collect(),
        Execution::Parallel { jobs } => parallel(n, jobs, f),
    }
}

#[cfg(feature = "parallel")]
fn parallel<T, F>(n: usize, jobs: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    use rayon::prelude::*;
    if jobs == 0 {
        return (0..n).into_par_iter().map(f).collect();
    }
    match rayon::ThreadPoolBuilder::new().num_threads(jobs).build() {
        Ok(pool) => pool.install(|| (0..n).into_par_iter().map(&f).collect()),
        Err(e) => {
            log::warn!("could not start a {jobs}-thread pool ({e}); running inline");
            (0..n).map(f).collect()
        }
    }
}

#[cfg(not(feature = "parallel"))]
fn parallel<T, F>(n: usize, _jobs: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    (0..n).map(f).collect()
}
