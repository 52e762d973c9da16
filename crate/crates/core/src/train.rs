//! Curriculum training loop.
//!
//! Every epoch is planned up front as a list of single-group batches. In
//! ordered-epoch mode an epoch walks the groups from the most blurred level
//! down to level 0; in staged mode the epochs are divided evenly across the
//! groups, most blurred first. All shuffles come from streams keyed by
//! `(seed, epoch, group)`, so resuming at an epoch boundary replays the
//! remaining epochs bit for bit.

use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::curriculum::{CurriculumDataset, GroupPass};
use crate::image::Image;
use crate::optim::{OptimError, OptimizerKind, OptimizerState};
use crate::real::Real;
use crate::rng::{stream_rng, Stream};
use crate::tensor::{Graph, Tensor, TensorError};
use crate::vit::{bind, forward, patch_batch, ViTConfig, ViTError, ViTParams, ViTWeights};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(&'static str),
    #[error("curriculum is empty")]
    EmptyCurriculum,
    #[error("batch size {batch} exceeds the smallest blur group ({smallest} samples)")]
    BatchExceedsGroup { batch: usize, smallest: usize },
    #[error("staged mode needs at least one epoch per group ({groups} groups, {epochs} epochs)")]
    TooFewEpochs { epochs: usize, groups: usize },
    #[error("label {label} out of range for {classes} classes")]
    Label { label: usize, classes: usize },
    #[error("non-finite loss at step {0}")]
    NonFinite(u64),
    #[error(transparent)]
    Model(#[from] ViTError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Optim(#[from] OptimError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CurriculumMode {
    /// Epochs split evenly across groups, most blurred group first.
    Staged,
    /// Every epoch visits all groups, most blurred first.
    OrderedEpoch,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    F32,
    F64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    pub seed: u64,
    pub curriculum_mode: CurriculumMode,
    /// Write a checkpoint every this many epochs (0 disables intermediate
    /// checkpoints; the final one is always written).
    pub checkpoint_every: usize,
    pub precision: Precision,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch_size: 16,
            learning_rate: 3e-4,
            optimizer: OptimizerKind::default(),
            seed: 0,
            curriculum_mode: CurriculumMode::OrderedEpoch,
            checkpoint_every: 0,
            precision: Precision::F64,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.epochs == 0 {
            return Err(TrainError::Config("epochs must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(TrainError::Config("batch_size must be at least 1"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(TrainError::Config("learning_rate must be positive"));
        }
        if let OptimizerKind::Adam { beta1, beta2, eps } = self.optimizer {
            let unit = |b: f64| (0.0..1.0).contains(&b);
            if !unit(beta1) || !unit(beta2) || !(eps > 0.0) {
                return Err(TrainError::Config(
                    "adam needs beta1, beta2 in [0, 1) and eps > 0",
                ));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub epoch: usize,
    /// Global optimizer step, starting at 1.
    pub step: u64,
    /// Blur level of every sample in the batch.
    pub group: usize,
    pub loss: f64,
    pub lr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mean_loss: f64,
    /// Accuracy of the pre-update predictions on the epoch's batches.
    pub train_accuracy: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunLog {
    pub seed: u64,
    /// Hash of the effective configuration, filled in by the caller.
    pub fingerprint: String,
    pub steps: Vec<StepRecord>,
    pub epochs: Vec<EpochRecord>,
}

/// A batch of sample indices drawn from one blur group.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Batch {
    pub group: usize,
    pub samples: Vec<usize>,
}

fn chunk_passes(passes: Vec<GroupPass>, batch_size: usize) -> Vec<Batch> {
    passes
        .into_iter()
        .flat_map(|pass| {
            pass.samples
                .chunks(batch_size)
                .map(|c| Batch {
                    group: pass.group,
                    samples: c.to_vec(),
                })
                .collect::<Vec<_>>()
        })
        .collect()
}

/// Shuffled order of `n` samples treated as one group at level 0; this is
/// exactly the pass a one-level curriculum produces.
pub fn plain_pass(n: usize, seed: u64, epoch: usize) -> GroupPass {
    let mut samples: Vec<usize> = (0..n).collect();
    samples.shuffle(&mut stream_rng(seed, Stream::EpochShuffle, epoch as u64, 0));
    GroupPass { group: 0, samples }
}

/// Mean cross-entropy of a batch and the gradient of every trainable slot.
pub fn loss_and_grads<T: Real>(
    params: &ViTParams<T>,
    config: &ViTConfig,
    images: &[&Image],
    labels: &[usize],
) -> Result<(T, ViTWeights<Option<Tensor<T>>>, Vec<usize>), TrainError> {
    let mut g = Graph::new();
    let bound = bind(&mut g, params, config);
    let patches = g.constant(patch_batch(images, config)?);
    let out = forward(&mut g, patches, &bound, config)?;
    let loss = g.cross_entropy(out.logits, labels)?;
    let predictions = g
        .value(out.logits)
        .data()
        .chunks(config.n_classes)
        .map(argmax)
        .collect();
    g.backward(loss)?;
    let value = g.value(loss).item().expect("scalar loss");
    let grads = bound.map(|_, &v| g.grad_tensor(v));
    Ok((value, grads, predictions))
}

pub fn argmax<T: Real>(row: &[T]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = i;
        }
    }
    best
}

/// Model, optimizer and progress counters of one training run.
#[derive(Debug, Clone)]
pub struct Trainer<T> {
    pub model: ViTConfig,
    pub config: TrainConfig,
    pub params: ViTParams<T>,
    pub optimizer: OptimizerState<T>,
    /// Completed epochs.
    pub epochs_done: usize,
    /// Completed optimizer steps.
    pub steps_done: u64,
}

impl<T: Real> Trainer<T> {
    pub fn new(model: ViTConfig, config: TrainConfig) -> Result<Self, TrainError> {
        config.validate()?;
        let params = ViTParams::init(&model, config.seed)?;
        let optimizer = OptimizerState::new(config.optimizer, &params);
        Ok(Self {
            model,
            config,
            params,
            optimizer,
            epochs_done: 0,
            steps_done: 0,
        })
    }

    /// Continues a run from saved state.
    pub fn resume(
        model: ViTConfig,
        config: TrainConfig,
        params: ViTParams<T>,
        optimizer: OptimizerState<T>,
        epochs_done: usize,
    ) -> Result<Self, TrainError> {
        config.validate()?;
        model.validate()?;
        params.check_shapes(&model)?;
        let steps_done = optimizer.step;
        Ok(Self {
            model,
            config,
            params,
            optimizer,
            epochs_done,
            steps_done,
        })
    }

    /// Checks the curriculum against the configuration before any compute.
    pub fn check_curriculum(&self, data: &CurriculumDataset) -> Result<(), TrainError> {
        if data.is_empty() {
            return Err(TrainError::EmptyCurriculum);
        }
        if let Some(s) = data
            .samples()
            .iter()
            .find(|s| s.label >= self.model.n_classes)
        {
            return Err(TrainError::Label {
                label: s.label,
                classes: self.model.n_classes,
            });
        }
        for s in data.samples() {
            self.model.check_image(&s.image)?;
        }
        if self.config.curriculum_mode == CurriculumMode::Staged {
            let k = data.schedule().k();
            if self.config.epochs < k {
                return Err(TrainError::TooFewEpochs {
                    epochs: self.config.epochs,
                    groups: k,
                });
            }
            if self.config.batch_size > data.smallest_group() {
                return Err(TrainError::BatchExceedsGroup {
                    batch: self.config.batch_size,
                    smallest: data.smallest_group(),
                });
            }
        }
        Ok(())
    }

    /// Blur group trained during `epoch` in staged mode.
    pub fn staged_group(&self, k: usize, epoch: usize) -> usize {
        let stage = epoch * k / self.config.epochs;
        k - 1 - stage.min(k - 1)
    }

    /// Batches of `epoch`, in training order.
    pub fn plan_epoch(&self, data: &CurriculumDataset, epoch: usize) -> Vec<Batch> {
        let seed = self.config.seed;
        let passes = match self.config.curriculum_mode {
            CurriculumMode::OrderedEpoch => data.epoch_passes(seed, epoch),
            CurriculumMode::Staged => {
                let b = self.staged_group(data.schedule().k(), epoch);
                alloc::vec![data.group_pass(b, seed, epoch)]
            }
        };
        chunk_passes(passes, self.config.batch_size)
    }

    /// One optimizer update on a batch. Returns the loss and the
    /// pre-update predictions.
    pub fn step(
        &mut self,
        images: &[&Image],
        labels: &[usize],
    ) -> Result<(f64, Vec<usize>), TrainError> {
        let (loss, grads, predictions) = loss_and_grads(&self.params, &self.model, images, labels)?;
        let loss = loss.as_f64();
        if !loss.is_finite() {
            return Err(TrainError::NonFinite(self.steps_done + 1));
        }
        self.optimizer
            .apply(&mut self.params, &grads, self.config.learning_rate)?;
        self.steps_done += 1;
        Ok((loss, predictions))
    }

    /// Runs the given batches as epoch `epoch` over `samples` given as
    /// `(image, label)`.
    pub fn run_batches(
        &mut self,
        epoch: usize,
        batches: &[Batch],
        samples: &[(&Image, usize)],
    ) -> Result<(Vec<StepRecord>, EpochRecord), TrainError> {
        let mut records = Vec::with_capacity(batches.len());
        let (mut loss_sum, mut correct, mut seen) = (0.0, 0usize, 0usize);
        for batch in batches {
            let images: Vec<&Image> = batch.samples.iter().map(|&i| samples[i].0).collect();
            let labels: Vec<usize> = batch.samples.iter().map(|&i| samples[i].1).collect();
            let (loss, predictions) = self.step(&images, &labels)?;
            correct += predictions
                .iter()
                .zip(&labels)
                .filter(|(p, l)| p == l)
                .count();
            seen += labels.len();
            loss_sum += loss;
            records.push(StepRecord {
                epoch,
                step: self.steps_done,
                group: batch.group,
                loss,
                lr: self.config.learning_rate,
            });
        }
        self.epochs_done = epoch + 1;
        let summary = EpochRecord {
            epoch,
            mean_loss: loss_sum / records.len().max(1) as f64,
            train_accuracy: correct as f64 / seen.max(1) as f64,
        };
        Ok((records, summary))
    }

    /// Trains one curriculum epoch.
    pub fn run_epoch(
        &mut self,
        data: &CurriculumDataset,
        epoch: usize,
    ) -> Result<(Vec<StepRecord>, EpochRecord), TrainError> {
        let batches = self.plan_epoch(data, epoch);
        let samples: Vec<(&Image, usize)> =
            data.samples().iter().map(|s| (&s.image, s.label)).collect();
        self.run_batches(epoch, &batches, &samples)
    }

    /// Trains the remaining epochs, calling `after_epoch` once each epoch
    /// finishes (e.g. to checkpoint).
    pub fn fit<E>(
        &mut self,
        data: &CurriculumDataset,
        log: &mut RunLog,
        mut after_epoch: impl FnMut(&Self, &[StepRecord], &EpochRecord) -> Result<(), E>,
    ) -> Result<(), E>
    where
        E: From<TrainError>,
    {
        self.check_curriculum(data)?;
        log.seed = self.config.seed;
        for epoch in self.epochs_done..self.config.epochs {
            let (steps, summary) = self.run_epoch(data, epoch)?;
            after_epoch(self, &steps, &summary)?;
            log.steps.extend(steps);
            log.epochs.push(summary);
        }
        Ok(())
    }

    /// Trains on an unordered dataset, each epoch a single shuffled pass.
    pub fn fit_plain(
        &mut self,
        samples: &[(&Image, usize)],
        log: &mut RunLog,
    ) -> Result<(), TrainError> {
        if samples.is_empty() {
            return Err(TrainError::EmptyCurriculum);
        }
        log.seed = self.config.seed;
        for epoch in self.epochs_done..self.config.epochs {
            let pass = plain_pass(samples.len(), self.config.seed, epoch);
            let batches = chunk_passes(alloc::vec![pass], self.config.batch_size);
            let (steps, summary) = self.run_batches(epoch, &batches, samples)?;
            log.steps.extend(steps);
            log.epochs.push(summary);
        }
        Ok(())
    }
}
