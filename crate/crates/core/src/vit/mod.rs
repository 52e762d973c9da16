//! Vision Transformer: patch tokens plus a class token, positional table,
//! pre-norm multi-head self-attention encoder and a linear head on the final
//! normalized class-token state.

mod model;
mod params;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::image::Image;
use crate::tensor::TensorError;

pub use model::{
    bind, bind_frozen, embed, encoder_block, forward, msa, patch_batch, patchify, predict_proba,
    sinusoidal_positions, unpatchify, BoundBlock, BoundParams, ForwardOutput,
};
pub use params::{is_trainable, param_shapes, BlockWeights, ViTParams, ViTWeights};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ViTError {
    #[error("image {height}x{width} is not divisible into {patch}x{patch} patches")]
    Indivisible {
        height: usize,
        width: usize,
        patch: usize,
    },
    #[error("latent width {dim} is not divisible by {heads} heads")]
    Heads { dim: usize, heads: usize },
    #[error("sinusoidal positions need an even latent width, got {0}")]
    OddWidth(usize),
    #[error("invalid config: {0}")]
    Config(&'static str),
    #[error("image is {got_h}x{got_w}x{got_c}, model expects {h}x{w}x{c}")]
    ImageShape {
        got_h: usize,
        got_w: usize,
        got_c: usize,
        h: usize,
        w: usize,
        c: usize,
    },
    #[error("parameter {name}: expected shape {expected:?}, got {got:?}")]
    ParamShape {
        name: alloc::string::String,
        expected: alloc::vec::Vec<usize>,
        got: alloc::vec::Vec<usize>,
    },
    #[error("empty batch")]
    EmptyBatch,
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PosMode {
    /// Trainable table.
    Learned,
    /// Fixed sin/cos table.
    Sinusoidal,
}

/// Architecture hyperparameters.
///
/// Defaults: 224×224×3 input, 16-pixel patches, width 32, 4 heads, 4
/// blocks, MLP ratio 4, two classes, sinusoidal positions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ViTConfig {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    /// Patch side `P` in pixels.
    pub patch: usize,
    /// Latent width `D`.
    pub dim: usize,
    pub heads: usize,
    pub blocks: usize,
    pub mlp_ratio: usize,
    pub n_classes: usize,
    pub pos_mode: PosMode,
    pub ln_eps: f64,
}

impl Default for ViTConfig {
    fn default() -> Self {
        Self {
            height: 224,
            width: 224,
            channels: 3,
            patch: 16,
            dim: 32,
            heads: 4,
            blocks: 4,
            mlp_ratio: 4,
            n_classes: 2,
            pos_mode: PosMode::Sinusoidal,
            ln_eps: 1e-5,
        }
    }
}

impl ViTConfig {
    pub fn validate(&self) -> Result<(), ViTError> {
        if self.height == 0 || self.width == 0 || self.patch == 0 {
            return Err(ViTError::Config("height, width and patch must be positive"));
        }
        if self.channels != 1 && self.channels != 3 {
            return Err(ViTError::Config("channels must be 1 or 3"));
        }
        if !self.height.is_multiple_of(self.patch) || !self.width.is_multiple_of(self.patch) {
            return Err(ViTError::Indivisible {
                height: self.height,
                width: self.width,
                patch: self.patch,
            });
        }
        if self.dim == 0 || self.heads == 0 || !self.dim.is_multiple_of(self.heads) {
            return Err(ViTError::Heads {
                dim: self.dim,
                heads: self.heads,
            });
        }
        if self.pos_mode == PosMode::Sinusoidal && !self.dim.is_multiple_of(2) {
            return Err(ViTError::OddWidth(self.dim));
        }
        if self.blocks == 0 || self.mlp_ratio == 0 {
            return Err(ViTError::Config("blocks and mlp_ratio must be positive"));
        }
        if self.n_classes < 2 {
            return Err(ViTError::Config("need at least two classes"));
        }
        if !(self.ln_eps > 0.0) {
            return Err(ViTError::Config("ln_eps must be positive"));
        }
        Ok(())
    }

    /// Patch count `N = HW / P²`.
    pub fn n_patches(&self) -> usize {
        (self.height / self.patch) * (self.width / self.patch)
    }

    /// Sequence length including the class token.
    pub fn tokens(&self) -> usize {
        self.n_patches() + 1
    }

    /// Flattened patch length `P²C`.
    pub fn patch_dim(&self) -> usize {
        self.patch * self.patch * self.channels
    }

    pub fn head_dim(&self) -> usize {
        self.dim / self.heads
    }

    pub fn hidden(&self) -> usize {
        self.dim * self.mlp_ratio
    }

    pub fn check_image(&self, img: &Image) -> Result<(), ViTError> {
        if img.height() != self.height
            || img.width() != self.width
            || img.channels() != self.channels
        {
            return Err(ViTError::ImageShape {
                got_h: img.height(),
                got_w: img.width(),
                got_c: img.channels(),
                h: self.height,
                w: self.width,
                c: self.channels,
            });
        }
        Ok(())
    }
}
