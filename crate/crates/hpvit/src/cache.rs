//! Prepared curriculum on disk: `group_<b>/` directories of blurred PNGs
//! plus a `manifest.json` that fixes labels, groups and sample order.

use std::fs;
use std::path::{Path, PathBuf};

use hpvit_core::blur::{blur_image, BlurError, BlurSchedule, CurriculumPartition};
use hpvit_core::curriculum::{CurriculumError, CurriculumSample};
use hpvit_core::{CurriculumDataset, Image};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::dataset::{decode, decode_and_resize, hex, save_png, DataError, DatasetManifest};
use crate::parallel::par_map;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const CACHE_FORMAT: u32 = 1;
/// Bit depth of cached images.
pub const CACHE_BITS: u8 = 16;

#[derive(Debug, Error)]
pub enum CacheError {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Blur(#[from] BlurError),
    #[error(transparent)]
    Curriculum(#[from] CurriculumError),
    #[error("{path}: invalid curriculum manifest: {message}")]
    Manifest { path: PathBuf, message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LevelEntry {
    pub b: usize,
    pub y: usize,
    pub sigma: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CachedSample {
    /// Path of the blurred image, relative to the cache directory.
    pub file: String,
    /// Path of the source image, relative to the source root.
    pub source: String,
    pub label: usize,
    pub group: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CurriculumManifest {
    pub format: u32,
    pub k: usize,
    pub seed: u64,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub source_root: String,
    /// Hash of the training-split dataset manifest.
    pub source_hash: String,
    pub classes: Vec<String>,
    pub levels: Vec<LevelEntry>,
    pub samples: Vec<CachedSample>,
    /// SHA-256 over every field above and the bytes of every cached image.
    pub hash: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PrepareOptions {
    pub k: usize,
    pub seed: u64,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub threads: usize,
}

pub fn group_dir(b: usize) -> String {
    format!("group_{b}")
}

fn manifest_hash(m: &CurriculumManifest, image_digests: &[String]) -> String {
    let mut probe = m.clone();
    probe.hash = String::new();
    let mut h = Sha256::new();
    h.update(serde_json::to_vec(&probe).expect("manifest serializes"));
    for d in image_digests {
        h.update(d.as_bytes());
    }
    hex(&h.finalize())
}

fn digest_file(path: &Path) -> Result<String, DataError> {
    let bytes = fs::read(path).map_err(|e| DataError::io(path, e))?;
    Ok(hex(&Sha256::digest(&bytes)))
}

/// Blurs every sample of `source` at its partition level and writes the
/// cache under `out`, which must already exist.
pub fn prepare(
    source: &DatasetManifest,
    opts: &PrepareOptions,
    out: &Path,
) -> Result<CurriculumManifest, CacheError> {
    let schedule = BlurSchedule::linear(opts.k)?;
    let partition = CurriculumPartition::new(source.len(), opts.k, opts.seed)?;
    let kernels: Vec<_> = schedule.levels().iter().map(|l| l.kernel()).collect();
    for b in 0..opts.k {
        let dir = out.join(group_dir(b));
        fs::create_dir_all(&dir).map_err(|e| DataError::io(&dir, e))?;
    }
    let mut counters = vec![0usize; opts.k];
    let jobs: Vec<(usize, CachedSample)> = source
        .samples
        .iter()
        .zip(&partition.assignment)
        .enumerate()
        .map(|(i, (s, &group))| {
            let idx = counters[group];
            counters[group] += 1;
            let sample = CachedSample {
                file: format!("{}/{idx:05}.png", group_dir(group)),
                source: s.path.clone(),
                label: s.label,
                group,
            };
            (i, sample)
        })
        .collect();
    let digests = par_map(&jobs, opts.threads, |(i, c)| {
        let src = source.sample_path(&source.samples[*i]);
        let img = decode_and_resize(&src, opts.height, opts.width, opts.channels)?;
        let blurred = blur_image(&img, &kernels[c.group]);
        let dst = out.join(&c.file);
        save_png(&blurred, &dst, CACHE_BITS)?;
        digest_file(&dst)
    })?;
    let levels = schedule
        .levels()
        .iter()
        .map(|l| LevelEntry {
            b: l.b,
            y: l.y,
            sigma: l.sigma,
            count: counters[l.b],
        })
        .collect();
    let mut manifest = CurriculumManifest {
        format: CACHE_FORMAT,
        k: opts.k,
        seed: opts.seed,
        height: opts.height,
        width: opts.width,
        channels: opts.channels,
        source_root: source.root.clone(),
        source_hash: source.hash.clone(),
        classes: source.classes.clone(),
        levels,
        samples: jobs.into_iter().map(|(_, c)| c).collect(),
        hash: String::new(),
    };
    manifest.hash = manifest_hash(&manifest, &digests);
    let path = out.join(MANIFEST_FILE);
    write_json(&path, &manifest)?;
    Ok(manifest)
}

/// Pretty JSON with a trailing newline.
pub fn write_json<S: Serialize>(path: &Path, value: &S) -> Result<(), DataError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| DataError::Encode {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    text.push('\n');
    fs::write(path, text).map_err(|e| DataError::io(path, e))
}

impl CurriculumManifest {
    pub fn read(dir: &Path) -> Result<Self, CacheError> {
        let path = dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).map_err(|e| DataError::io(&path, e))?;
        let m: Self = serde_json::from_str(&text).map_err(|e| CacheError::Manifest {
            path: path.clone(),
            message: e.to_string(),
        })?;
        m.validate()
            .map_err(|message| CacheError::Manifest { path, message })?;
        Ok(m)
    }

    fn validate(&self) -> Result<(), String> {
        if self.format != CACHE_FORMAT {
            return Err(format!("unsupported format {}", self.format));
        }
        let schedule = BlurSchedule::linear(self.k).map_err(|e| e.to_string())?;
        let expected: Vec<(usize, usize, f64)> = schedule
            .levels()
            .iter()
            .map(|l| (l.b, l.y, l.sigma))
            .collect();
        let got: Vec<(usize, usize, f64)> =
            self.levels.iter().map(|l| (l.b, l.y, l.sigma)).collect();
        if expected != got {
            return Err("levels do not match the blur schedule".into());
        }
        for s in &self.samples {
            if s.label >= self.classes.len() {
                return Err(format!("{}: label {} out of range", s.file, s.label));
            }
            if s.group >= self.k {
                return Err(format!("{}: group {} out of range", s.file, s.group));
            }
        }
        for l in &self.levels {
            let n = self.samples.iter().filter(|s| s.group == l.b).count();
            if n != l.count {
                return Err(format!(
                    "group {} lists {} samples, found {n}",
                    l.b, l.count
                ));
            }
        }
        Ok(())
    }
}

/// Reads a prepared cache back, verifying the manifest hash against the
/// image bytes.
pub fn load(
    dir: &Path,
    threads: usize,
) -> Result<(CurriculumManifest, CurriculumDataset), CacheError> {
    let manifest = CurriculumManifest::read(dir)?;
    let decoded = par_map(&manifest.samples, threads, |s| {
        let path = dir.join(&s.file);
        let digest = digest_file(&path)?;
        let img = decode(&path, manifest.channels)?;
        Ok::<_, DataError>((img, digest))
    })?;
    let digests: Vec<String> = decoded.iter().map(|(_, d)| d.clone()).collect();
    if manifest_hash(&manifest, &digests) != manifest.hash {
        return Err(CacheError::Manifest {
            path: dir.join(MANIFEST_FILE),
            message: "content hash mismatch: cached images or manifest were modified".into(),
        });
    }
    let samples = decoded
        .into_iter()
        .zip(&manifest.samples)
        .enumerate()
        .map(|(i, ((image, _), s))| {
            check_shape(&manifest, image, &s.file).map(|image| CurriculumSample {
                image,
                label: s.label,
                group: s.group,
                source_index: i,
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    let schedule = BlurSchedule::linear(manifest.k)?;
    let data = CurriculumDataset::from_blurred(schedule, samples)?;
    Ok((manifest, data))
}

fn check_shape(m: &CurriculumManifest, image: Image, file: &str) -> Result<Image, CacheError> {
    if (image.height(), image.width()) != (m.height, m.width) {
        return Err(CacheError::Manifest {
            path: PathBuf::from(file),
            message: format!(
                "image is {}x{}, manifest says {}x{}",
                image.height(),
                image.width(),
                m.height,
                m.width
            ),
        });
    }
    Ok(image)
}
