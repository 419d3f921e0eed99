//! Index-ordered map over independent jobs.
//!
//! With the `parallel` feature, [`Execution::Parallel`] spreads jobs over
//! the rayon pool; without it both modes run sequentially. Results always
//! come back in index order.

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum Execution {
    Serial,
    #[default]
    Parallel,
}

pub fn map_indexed<T, F>(n: usize, execution: Execution, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    match execution {
        Execution::Serial => (0..n).map(f).collect(),
        Execution::Parallel => parallel(n, f),
    }
}

#[cfg(feature = "parallel")]
fn parallel<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    use rayon::prelude::*;
    (0..n).into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
fn parallel<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    (0..n).map(f).collect()
}

/// Whether [`Execution::Parallel`] actually runs concurrently.
pub const PARALLEL_ENABLED: bool = cfg!(feature = "parallel");
