//! Driver for déjà vu audits: configuration, store discovery, audit and
//! sweep runs, report files, and figures.

use std::path::PathBuf;

use thiserror::Error;

pub mod config;
pub mod plot;
pub mod run;
pub mod synth;

/// Environment variable holding the worker-thread count.
pub const THREADS_ENV: &str = "DEJAVU_THREADS";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("{role} not found: {}", path.display())]
    MissingInput { role: &'static str, path: PathBuf },
    #[error("MissingAxisInput: {axis} = {value}: {role} not found: {}", path.display())]
    MissingAxisInput { axis: &'static str, value: String, role: &'static str, path: PathBuf },
    #[error("config has no [sweep] section")]
    NoSweep,
    #[error("no sweep value produced a result; first error: {0}")]
    AllCellsFailed(String),
}

/// Sizes the global thread pool from `DEJAVU_THREADS` when set.
pub fn init_threads() -> anyhow::Result<()> {
    if let Ok(v) = std::env::var(THREADS_ENV) {
        let n: usize = v.trim().parse().map_err(|_| anyhow::anyhow!("{THREADS_ENV} must be a positive integer, got `{v}`"))?;
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(())
}
