//! Checkpoints: trained models and posteriors on disk.
//!
//! Checkpoints are self-describing JSON: a `kind` tag selects between a point
//! model and a variational posterior, and a metadata block records the model
//! tag, the seed, the producing configuration, and the code version, so any
//! report derived from a checkpoint can name exactly what produced it.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::baselines::FactorModel;
use crate::error::{Error, Result};
use crate::vi::VariationalPosterior;

/// Provenance block stored in every checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    /// Model tag, e.g. `svd`, `svdbias`, `pmf`, `blfm`, `blfmbias`.
    pub model_tag: String,
    pub seed: u64,
    /// Version of the code that wrote the checkpoint.
    pub code_version: String,
    /// The full training configuration, as JSON.
    pub config: serde_json::Value,
}

/// A persisted model of either family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Checkpoint {
    Factor {
        meta: CheckpointMeta,
        model: FactorModel,
    },
    Posterior {
        meta: CheckpointMeta,
        posterior: VariationalPosterior,
    },
}

impl Checkpoint {
    pub fn meta(&self) -> &CheckpointMeta {
        match self {
            Checkpoint::Factor { meta, .. } => meta,
            Checkpoint::Posterior { meta, .. } => meta,
        }
    }
}

/// The crate version baked into checkpoints.
pub fn code_version() -> String {
    env!("CARGO_PKG_VERSION").to_string()
}

/// Write a checkpoint as pretty-printed JSON.
pub fn save_checkpoint(path: &Path, checkpoint: &Checkpoint) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    let json = serde_json::to_string_pretty(checkpoint)?;
    fs::write(path, json + "\n")?;
    Ok(())
}

/// Read a checkpoint written by [`save_checkpoint`].
pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::MalformedFile {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}
