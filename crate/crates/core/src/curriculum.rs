//! Blurred training set plus its most-blurred-first iteration order.

use alloc::vec::Vec;

use rand::seq::SliceRandom;
use thiserror::Error;

use crate::blur::{blur_image, BlurSchedule, CurriculumPartition};
use crate::image::Image;
use crate::rng::{stream_rng, Stream};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CurriculumError {
    #[error("partition covers {partition} samples but the dataset has {dataset}")]
    PartitionSize { partition: usize, dataset: usize },
    #[error("partition has {partition} groups but the schedule has {schedule} levels")]
    GroupCount { partition: usize, schedule: usize },
    #[error("sample {index} is assigned to group {group}, outside 0..{k}")]
    GroupOutOfRange {
        index: usize,
        group: usize,
        k: usize,
    },
    #[error("blur group {0} has no samples")]
    EmptyGroup(usize),
    #[error("curriculum has no samples")]
    Empty,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CurriculumSample {
    pub image: Image,
    pub label: usize,
    /// Blur level this sample was rendered at.
    pub group: usize,
    /// Index of the sample in the source dataset.
    pub source_index: usize,
}

/// Pre-blurred samples tagged with their blur group.
#[derive(Debug, Clone)]
pub struct CurriculumDataset {
    schedule: BlurSchedule,
    samples: Vec<CurriculumSample>,
    groups: Vec<Vec<usize>>,
}

/// One block of the iteration order: every sample of a single blur group.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroupPass {
    pub group: usize,
    pub samples: Vec<usize>,
}

impl CurriculumDataset {
    /// Blurs each sample at the level of its partition group.
    pub fn apply(
        dataset: &[(Image, usize)],
        schedule: &BlurSchedule,
        partition: &CurriculumPartition,
    ) -> Result<Self, CurriculumError> {
        if partition.len() != dataset.len() {
            return Err(CurriculumError::PartitionSize {
                partition: partition.len(),
                dataset: dataset.len(),
            });
        }
        if partition.k() != schedule.k() {
            return Err(CurriculumError::GroupCount {
                partition: partition.k(),
                schedule: schedule.k(),
            });
        }
        let kernels: Vec<_> = schedule.levels().iter().map(|l| l.kernel()).collect();
        let samples = dataset
            .iter()
            .zip(&partition.assignment)
            .enumerate()
            .map(|(i, ((img, label), &group))| CurriculumSample {
                image: blur_image(img, &kernels[group]),
                label: *label,
                group,
                source_index: i,
            })
            .collect();
        Self::from_blurred(schedule.clone(), samples)
    }

    /// Wraps samples that were blurred elsewhere (e.g. read back from a
    /// prepared cache).
    pub fn from_blurred(
        schedule: BlurSchedule,
        samples: Vec<CurriculumSample>,
    ) -> Result<Self, CurriculumError> {
        if samples.is_empty() {
            return Err(CurriculumError::Empty);
        }
        let k = schedule.k();
        let mut groups = alloc::vec![Vec::new(); k];
        for (i, s) in samples.iter().enumerate() {
            if s.group >= k {
                return Err(CurriculumError::GroupOutOfRange {
                    index: i,
                    group: s.group,
                    k,
                });
            }
            groups[s.group].push(i);
        }
        if let Some(g) = groups.iter().position(Vec::is_empty) {
            return Err(CurriculumError::EmptyGroup(g));
        }
        Ok(Self {
            schedule,
            samples,
            groups,
        })
    }

    pub fn schedule(&self) -> &BlurSchedule {
        &self.schedule
    }

    pub fn samples(&self) -> &[CurriculumSample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Sample indices of blur group `b`, in storage order.
    pub fn group(&self, b: usize) -> &[usize] {
        &self.groups[b]
    }

    pub fn smallest_group(&self) -> usize {
        self.groups.iter().map(Vec::len).min().unwrap_or(0)
    }

    /// Every group once, most blurred first, each shuffled with a stream
    /// keyed by `(seed, epoch, group)`.
    pub fn epoch_passes(&self, seed: u64, epoch: usize) -> Vec<GroupPass> {
        self.schedule
            .consumption_order()
            .into_iter()
            .map(|b| self.group_pass(b, seed, epoch))
            .collect()
    }

    /// All samples of group `b`, shuffled for `epoch`.
    pub fn group_pass(&self, b: usize, seed: u64, epoch: usize) -> GroupPass {
        let mut samples = self.groups[b].clone();
        samples.shuffle(&mut stream_rng(
            seed,
            Stream::EpochShuffle,
            epoch as u64,
            b as u64,
        ));
        GroupPass { group: b, samples }
    }
}
