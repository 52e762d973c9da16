//! Training configuration file and its override layers.
//!
//! Effective settings are resolved in the order
//! defaults < `--config` file < `--set key=value` < dedicated flags.
//! The file is JSON with the shape of [`RunConfig`]; unknown keys are
//! rejected at every level.
//!
//! ```json
//! {
//!   "model": { "patch": 8, "dim": 32, "heads": 4, "blocks": 4 },
//!   "train": { "epochs": 40, "batch_size": 10, "learning_rate": 0.001 }
//! }
//! ```

use std::fs;
use std::path::Path;

use hpvit_core::vit::ViTError;
use hpvit_core::{PosMode, TrainConfig, ViTConfig};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {message}")]
    File { path: String, message: String },
    #[error("--set {0}: expected dotted.key=value")]
    SetSyntax(String),
    #[error("--set {key}: `{parent}` is not an object")]
    SetPath { key: String, parent: String },
    #[error("invalid configuration: {0}")]
    Invalid(String),
    #[error(transparent)]
    Model(#[from] ViTError),
}

/// Model hyperparameters. Image shape and class count come from the
/// prepared curriculum, so they are not configurable here.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub patch: usize,
    pub dim: usize,
    pub heads: usize,
    pub blocks: usize,
    pub mlp_ratio: usize,
    pub pos_mode: PosMode,
    pub ln_eps: f64,
}

impl Default for ModelSection {
    fn default() -> Self {
        let d = ViTConfig::default();
        Self {
            patch: d.patch,
            dim: d.dim,
            heads: d.heads,
            blocks: d.blocks,
            mlp_ratio: d.mlp_ratio,
            pos_mode: d.pos_mode,
            ln_eps: d.ln_eps,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelSection,
    pub train: TrainConfig,
    /// Image loading workers; 0 uses every available core.
    pub threads: usize,
}

impl RunConfig {
    /// Defaults, then `file`, then each `key=value` of `sets` in order.
    pub fn resolve(file: Option<&Path>, sets: &[String]) -> Result<Self, ConfigError> {
        let mut value = serde_json::to_value(Self::default()).expect("config serializes");
        if let Some(path) = file {
            let err = |message: String| ConfigError::File {
                path: path.display().to_string(),
                message,
            };
            let text = fs::read_to_string(path).map_err(|e| err(e.to_string()))?;
            let overlay: Value = serde_json::from_str(&text).map_err(|e| err(e.to_string()))?;
            merge(&mut value, overlay);
            serde_json::from_value::<Self>(value.clone()).map_err(|e| err(e.to_string()))?;
        }
        for s in sets {
            apply_set(&mut value, s)?;
        }
        serde_json::from_value(value).map_err(|e| ConfigError::Invalid(e.to_string()))
    }

    pub fn model_config(
        &self,
        height: usize,
        width: usize,
        channels: usize,
        n_classes: usize,
    ) -> Result<ViTConfig, ConfigError> {
        let m = &self.model;
        let config = ViTConfig {
            height,
            width,
            channels,
            patch: m.patch,
            dim: m.dim,
            heads: m.heads,
            blocks: m.blocks,
            mlp_ratio: m.mlp_ratio,
            n_classes,
            pos_mode: m.pos_mode,
            ln_eps: m.ln_eps,
        };
        config.validate()?;
        Ok(config)
    }
}

fn merge(base: &mut Value, overlay: Value) {
    match (base, overlay) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// Applies one `dotted.key=value`. The value is parsed as JSON when
/// possible and taken as a string otherwise, so `train.epochs=5` and
/// `train.curriculum_mode=staged` both work.
pub fn apply_set(root: &mut Value, assignment: &str) -> Result<(), ConfigError> {
    let (key, raw) = assignment
        .split_once('=')
        .filter(|(k, _)| !k.is_empty() && k.split('.').all(|p| !p.is_empty()))
        .ok_or_else(|| ConfigError::SetSyntax(assignment.to_string()))?;
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let parts: Vec<&str> = key.split('.').collect();
    let mut node = root;
    for (i, part) in parts.iter().enumerate() {
        let map = node.as_object_mut().ok_or_else(|| ConfigError::SetPath {
            key: key.to_string(),
            parent: parts[..i].join("."),
        })?;
        if i + 1 == parts.len() {
            map.insert(part.to_string(), value);
            return Ok(());
        }
        node = map
            .entry(part.to_string())
            .or_insert_with(|| Value::Object(Default::default()));
    }
    unreachable!("key has at least one part")
}
