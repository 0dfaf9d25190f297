//! Execution policy for the data-parallel loops (k-means restarts, ridge
//! columns, Monte-Carlo chunks, seed sweeps).
//!
//! Parallel and sequential execution produce bitwise-identical results: every
//! parallel loop is an indexed map whose outputs are collected in index order
//! and reduced sequentially afterwards.

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

impl Exec {
    /// `threads == 1` pins the sequential path; anything else uses the default.
    pub fn from_threads(threads: usize) -> Self {
        if threads == 1 {
            Exec::Sequential
        } else {
            Exec::default()
        }
    }

    /// `(0..n).map(f).collect()`, possibly spread over the rayon pool.
    pub fn map<T, F>(self, n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        match self {
            #[cfg(feature = "parallel")]
            Exec::Parallel => {
                use rayon::prelude::*;
                (0..n).into_par_iter().map(f).collect()
            }
            _ => (0..n).map(f).collect(),
        }
    }
}
