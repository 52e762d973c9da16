//! Gaussian kernels, the linear k-level blur schedule and the disjoint
//! dataset partition that assigns every sample to one blur level.

use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::image::Image;
use crate::rng::{stream_rng, Stream};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BlurError {
    #[error("blur schedule needs at least one level")]
    NoLevels,
    #[error("gaussian sigma must be positive and finite, got {0}")]
    Sigma(f64),
    #[error("cannot split {samples} samples into {groups} groups")]
    TooFewSamples { samples: usize, groups: usize },
}

/// One rung of the schedule: level `b`, window radius `y = 2b + 1` and
/// standard deviation `σ = 0.3b + 0.5`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlurLevel {
    pub b: usize,
    /// Summation radius; the window spans `2y + 1` taps per axis.
    pub y: usize,
    pub sigma: f64,
}

impl BlurLevel {
    pub fn new(b: usize) -> Self {
        Self {
            b,
            y: 2 * b + 1,
            sigma: b as f64 * 0.3 + 0.5,
        }
    }

    pub fn kernel(&self) -> GaussianKernel {
        GaussianKernel::new(self.sigma, self.y).expect("schedule sigma is positive")
    }
}

/// `k` blur levels, ascending in `b`. Training consumes them descending.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlurSchedule {
    levels: Vec<BlurLevel>,
}

impl BlurSchedule {
    pub fn linear(k: usize) -> Result<Self, BlurError> {
        if k == 0 {
            return Err(BlurError::NoLevels);
        }
        Ok(Self {
            levels: (0..k).map(BlurLevel::new).collect(),
        })
    }

    pub fn k(&self) -> usize {
        self.levels.len()
    }

    pub fn levels(&self) -> &[BlurLevel] {
        &self.levels
    }

    pub fn level(&self, b: usize) -> Option<&BlurLevel> {
        self.levels.get(b)
    }

    /// Level indices in training order, most blurred first.
    pub fn consumption_order(&self) -> Vec<usize> {
        (0..self.k()).rev().collect()
    }
}

/// Square Gaussian window over offsets `i, j ∈ [-radius, radius]`,
/// normalized so the weights sum to one.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianKernel {
    sigma: f64,
    radius: usize,
    weights: Vec<f64>,
}

impl GaussianKernel {
    pub fn new(sigma: f64, radius: usize) -> Result<Self, BlurError> {
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(BlurError::Sigma(sigma));
        }
        let weights = Self::unnormalized(sigma, radius);
        let total: f64 = weights.iter().sum();
        Ok(Self {
            sigma,
            radius,
            weights: weights.into_iter().map(|w| w / total).collect(),
        })
    }

    /// `G(i, j) = exp(-(i² + j²) / 2σ²) / 2πσ²` over the window, before
    /// normalization. Row-major over `i` then `j`.
    pub fn unnormalized(sigma: f64, radius: usize) -> Vec<f64> {
        let r = radius as i64;
        let two_var = 2.0 * sigma * sigma;
        let norm = core::f64::consts::PI * two_var;
        let mut weights = Vec::with_capacity((2 * radius + 1).pow(2));
        for i in -r..=r {
            for j in -r..=r {
                weights.push(libm::exp(-((i * i + j * j) as f64) / two_var) / norm);
            }
        }
        weights
    }

    pub fn identity() -> Self {
        Self {
            sigma: f64::MIN_POSITIVE,
            radius: 0,
            weights: vec![1.0],
        }
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn radius(&self) -> usize {
        self.radius
    }

    pub fn side(&self) -> usize {
        2 * self.radius + 1
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Weight at offset `(i, j)`.
    pub fn at(&self, i: i64, j: i64) -> f64 {
        let r = self.radius as i64;
        self.weights[((i + r) * (2 * r + 1) + (j + r)) as usize]
    }
}

/// Maps any integer coordinate into `[0, len)` by mirror reflection with the
/// edge sample repeated (`… 1 0 | 0 1 2 … n-1 | n-1 n-2 …`), periodic in
/// `2·len` so offsets wider than the image stay in bounds.
pub fn reflect_index(pos: i64, len: usize) -> usize {
    let period = 2 * len as i64;
    let m = pos.rem_euclid(period);
    if m < len as i64 {
        m as usize
    } else {
        (period - 1 - m) as usize
    }
}

/// Correlates every channel with `kernel`:
/// `B(x, y) = Σᵢ Σⱼ I(x+i, y+j) · G(i, j)` with reflected borders, summed
/// in row-major kernel order, then clamped to `[0, 1]`.
pub fn blur_image(img: &Image, kernel: &GaussianKernel) -> Image {
    let (h, w, c) = (img.height(), img.width(), img.channels());
    let r = kernel.radius() as i64;
    let row_idx: Vec<Vec<usize>> = (0..h as i64)
        .map(|y| (-r..=r).map(|i| reflect_index(y + i, h)).collect())
        .collect();
    let col_idx: Vec<Vec<usize>> = (0..w as i64)
        .map(|x| (-r..=r).map(|j| reflect_index(x + j, w)).collect())
        .collect();
    let weights = kernel.weights();
    let side = kernel.side();
    let src = img.pixels();
    let mut out = vec![0.0; src.len()];
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                let mut acc = 0.0;
                for (ki, &sy) in row_idx[y].iter().enumerate() {
                    let wrow = &weights[ki * side..(ki + 1) * side];
                    for (&wt, &sx) in wrow.iter().zip(&col_idx[x]) {
                        acc += src[(sy * w + sx) * c + ch] * wt;
                    }
                }
                out[(y * w + x) * c + ch] = acc.clamp(0.0, 1.0);
            }
        }
    }
    let blurred = Image::new(h, w, c, out).expect("convex combination stays in range");
    match img.source_bits() {
        Some(bits) => blurred.with_source_bits(bits),
        None => blurred,
    }
}

/// Assignment of every sample index to exactly one of `k` groups.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CurriculumPartition {
    /// `assignment[i]` is the group (blur level) of sample `i`.
    pub assignment: Vec<usize>,
    /// Groups in consumption order: `k-1, k-2, …, 0`.
    pub group_order: Vec<usize>,
}

impl CurriculumPartition {
    /// Seeded shuffle, then split into `k` near-equal groups; the first
    /// `n mod k` groups receive one extra sample.
    pub fn new(n_samples: usize, k: usize, seed: u64) -> Result<Self, BlurError> {
        if k == 0 {
            return Err(BlurError::NoLevels);
        }
        if k > n_samples {
            return Err(BlurError::TooFewSamples {
                samples: n_samples,
                groups: k,
            });
        }
        let mut order: Vec<usize> = (0..n_samples).collect();
        order.shuffle(&mut stream_rng(seed, Stream::Partition, 0, 0));
        let (base, extra) = (n_samples / k, n_samples % k);
        let mut assignment = vec![0; n_samples];
        let mut cursor = 0;
        for g in 0..k {
            let size = base + usize::from(g < extra);
            for &idx in &order[cursor..cursor + size] {
                assignment[idx] = g;
            }
            cursor += size;
        }
        Ok(Self {
            assignment,
            group_order: (0..k).rev().collect(),
        })
    }

    pub fn k(&self) -> usize {
        self.group_order.len()
    }

    pub fn len(&self) -> usize {
        self.assignment.len()
    }

    pub fn is_empty(&self) -> bool {
        self.assignment.is_empty()
    }

    /// Sample indices of each group, ascending within a group.
    pub fn groups(&self) -> Vec<Vec<usize>> {
        let mut groups = vec![Vec::new(); self.k()];
        for (idx, &g) in self.assignment.iter().enumerate() {
            groups[g].push(idx);
        }
        groups
    }
}
