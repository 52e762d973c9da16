//! Core of the blur-curriculum Vision Transformer.
//!
//! Everything here is pure computation over in-memory buffers and builds
//! with `no_std` + `alloc`:
//!
//! - [`tensor`]: dense row-major tensors and a define-by-run reverse-mode
//!   autodiff [`Graph`](tensor::Graph).
//! - [`blur`] and [`curriculum`]: Gaussian kernels, the linear k-level blur
//!   schedule, the disjoint dataset partition and the most-blurred-first
//!   iteration order.
//! - [`vit`]: patch tokenization, class token, positional tables,
//!   pre-norm multi-head self-attention encoder and classification head.
//! - [`optim`] and [`train`]: SGD/Adam and the curriculum training loop.
//! - [`metrics`]: confusion matrices, precision/recall/F1, ROC and AUROC.
//!
//! File formats, dataset scanning and the command line live in the `hpvit`
//! crate.

#![no_std]

extern crate alloc;

pub mod blur;
pub mod curriculum;
pub mod image;
pub mod metrics;
pub mod optim;
pub mod real;
pub mod rng;
pub mod tensor;
pub mod train;
pub mod vit;

pub use blur::{BlurLevel, BlurSchedule, CurriculumPartition, GaussianKernel};
pub use curriculum::CurriculumDataset;
pub use image::Image;
pub use metrics::{ConfusionMatrix, MetricsReport, RocCurve};
pub use real::Real;
pub use tensor::{Graph, Tensor, TensorError, Var};
pub use train::{CurriculumMode, RunLog, TrainConfig, Trainer};
pub use vit::{PosMode, ViTConfig, ViTParams};
