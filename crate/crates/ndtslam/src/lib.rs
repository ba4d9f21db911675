//! File formats, configuration and the simulate / slam / eval / skyplot
//! pipeline on top of `ndtslam-core`.

pub mod config;
pub mod error;
pub mod formats;
pub mod pipeline;
pub mod svg;

pub use config::PipelineConfig;
pub use error::{PipelineError, Result};

/// Caps the worker pool at `NDTSLAM_THREADS`, or `TOOL_THREADS` if only that
/// is set. Call once, early.
pub fn configure_threads() -> Result<()> {
    let Some((name, value)) = ["NDTSLAM_THREADS", "TOOL_THREADS"]
        .into_iter()
        .find_map(|k| std::env::var(k).ok().map(|v| (k, v)))
    else {
        return Ok(());
    };
    let n: usize = value
        .trim()
        .parse()
        .ok()
        .filter(|n| *n > 0)
        .ok_or_else(|| PipelineError::Usage(format!("{name} must be a positive integer, got {value:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| PipelineError::Usage(e.to_string()))
}
