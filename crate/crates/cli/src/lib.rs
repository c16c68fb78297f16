//! Batch command-line front end over the factorization core and the image
//! pipeline: dataset generation and ingestion, cross-validated
//! experiments, model persistence, image enhancement, and report
//! emission.

pub mod config;
pub mod dataset;
pub mod enhance;
pub mod experiment;

use std::path::{Path, PathBuf};

/// Resolves an output path against the single supported environment
/// override: FBPTF_OUT_ROOT re-roots relative output paths; absolute
/// paths and unset/empty roots pass through unchanged.
pub fn resolve_out_path(path: &Path) -> PathBuf {
    if path.is_absolute() {
        return path.to_path_buf();
    }
    match std::env::var_os("FBPTF_OUT_ROOT") {
        Some(root) if !root.is_empty() => PathBuf::from(root).join(path),
        _ => path.to_path_buf(),
    }
}
