//! Library side of the `osb` command: configuration, run manifests, stage
//! implementations and charts.

pub mod commands;
pub mod config;
pub mod manifest;
pub mod plot;

/// Sizes the global worker pool; only effective before the first parallel call.
pub fn set_threads(n: usize) -> anyhow::Result<()> {
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    Ok(())
}
