//! Data-parallel map with a sequential fallback.
//!
//! Results are always returned in input order and every reduction in the
//! crate folds them left to right, so output is identical whichever mode
//! runs. Without the `parallel` feature everything is sequential.

use std::sync::atomic::{AtomicU8, Ordering};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ExecMode {
    Sequential,
    Parallel,
}

const MODE_DEFAULT: u8 = 0;
const MODE_SEQUENTIAL: u8 = 1;
const MODE_PARALLEL: u8 = 2;

static MODE: AtomicU8 = AtomicU8::new(MODE_DEFAULT);

/// Overrides the process-wide mode.
pub fn set_mode(mode: ExecMode) {
    let v = match mode {
        ExecMode::Sequential => MODE_SEQUENTIAL,
        ExecMode::Parallel => MODE_PARALLEL,
    };
    MODE.store(v, Ordering::Relaxed);
}

pub fn mode() -> ExecMode {
    match MODE.load(Ordering::Relaxed) {
        MODE_SEQUENTIAL => ExecMode::Sequential,
        MODE_PARALLEL => ExecMode::Parallel,
        _ if cfg!(feature = "parallel") => ExecMode::Parallel,
        _ => ExecMode::Sequential,
    }
}

/// Sizes the global worker pool. `None` reads `SENTVAE_THREADS`, falling
/// back to the machine's parallelism. Only the first call has an effect.
pub fn init_threads(threads: Option<usize>) {
    let threads = threads.or_else(|| std::env::var("SENTVAE_THREADS").ok()?.parse().ok());
    #[cfg(feature = "parallel")]
    if let Some(n) = threads.filter(|&n| n > 0) {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    #[cfg(not(feature = "parallel"))]
    let _ = threads;
}

/// `f(i, &items[i])` for every item, in order.
pub fn map<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(usize, &T) -> R + Sync + Send,
{
    map_with(mode(), items, f)
}

pub fn map_with<T, R, F>(mode: ExecMode, items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(usize, &T) -> R + Sync + Send,
{
    match mode {
        #[cfg(feature = "parallel")]
        ExecMode::Parallel if items.len() > 1 => {
            use rayon::prelude::*;
            items.par_iter().enumerate().map(|(i, t)| f(i, t)).collect()
        }
        _ => items.iter().enumerate().map(|(i, t)| f(i, t)).collect(),
    }
}

/// Like [`map`] for fallible work; the first error in input order wins.
pub fn try_map<T, R, E, F>(items: &[T], f: F) -> Result<Vec<R>, E>
where
    T: Sync,
    R: Send,
    E: Send,
    F: Fn(usize, &T) -> Result<R, E> + Sync + Send,
{
    map(items, f).into_iter().collect()
}
