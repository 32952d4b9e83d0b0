//! Dataset ingestion (IDX + synthetic), checkpoint persistence, and
//! experiment configuration.

mod checkpoint;
mod config;
mod dataset;
mod idx;
mod synth;

pub use checkpoint::{
    load_checkpoint, load_encoder, load_head, save_checkpoint, save_encoder, save_head,
    CheckpointSidecar,
};
pub use config::{EvalParams, ExperimentConfig, PipelineParams, Precision};
pub use dataset::{Dataset, Split};
pub use idx::{load_idx, save_idx};
pub use synth::{synth_dataset, SynthSpec};

use crate::error::Result;
use std::path::Path;

/// Writes a file atomically (temp file in the same directory, then rename).
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    std::fs::create_dir_all(dir)?;
    let tmp = dir.join(format!(
        ".{}.tmp",
        path.file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "out".to_string())
    ));
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}
