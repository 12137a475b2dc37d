//! Command orchestration for the `ocusim` binary: forge corpora, train the
//! world model, evaluate checkpoints and render reports.

pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod forge;
pub mod report;
pub mod train;

pub use config::RunConfig;
pub use error::{HarnessError, Result};

/// Runs `f` on a dedicated pool of `threads` workers.
pub fn with_threads<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> T {
    match rayon::ThreadPoolBuilder::new().num_threads(threads.max(1)).build() {
        Ok(pool) => pool.install(f),
        Err(_) => f(),
    }
}
