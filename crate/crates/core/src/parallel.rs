//! Data-parallel helpers with a sequential fallback.
//!
//! The `parallel` cargo feature (on by default) backs [`par_map`] with rayon.
//! With the feature off, or when [`force_sequential`] is in effect (the CLI's
//! `--deterministic` flag), the same closure runs sequentially in index order.
//! Output order is index order either way, so reductions downstream are
//! deterministic; only wall time differs.

use std::sync::atomic::{AtomicBool, Ordering};

static FORCE_SEQUENTIAL: AtomicBool = AtomicBool::new(false);

/// Globally force sequential execution (used by `--deterministic`).
pub fn force_sequential(on: bool) {
    FORCE_SEQUENTIAL.store(on, Ordering::SeqCst);
}

pub fn is_sequential() -> bool {
    FORCE_SEQUENTIAL.load(Ordering::SeqCst) || !cfg!(feature = "parallel")
}

/// Map `f` over `0..n`, collecting results in index order.
pub fn par_map<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        if !is_sequential() {
            use rayon::prelude::*;
            return (0..n).into_par_iter().map(f).collect();
        }
    }
    seq_map(n, f)
}

/// Sequential reference path, always available.
pub fn seq_map<T, F>(n: usize, f: F) -> Vec<T>
where
    F: Fn(usize) -> T,
{
    (0..n).map(f).collect()
}

/// Configure the rayon worker pool size. A `workers` of 1 forces the
/// sequential path regardless of the feature flag.
pub fn set_workers(workers: usize) {
    if workers <= 1 {
        force_sequential(true);
        return;
    }
    #[cfg(feature = "parallel")]
    {
        // Ignore failure: the global pool can only be built once.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build_global();
    }
}
