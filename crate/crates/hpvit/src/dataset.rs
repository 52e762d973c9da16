//! Folder-per-class datasets: scanning, manifests, splits and image IO.
//!
//! Layout: `<root>/<class>/<image>`, with PNG or binary PPM images. Class
//! and file order are lexicographic, so a manifest depends only on the tree
//! contents.

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use hpvit_core::image::ImageError;
use hpvit_core::rng::{stream_rng, Stream};
use hpvit_core::Image;
use image::{DynamicImage, ImageReader};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::parallel::par_map;

pub const IMAGE_EXTENSIONS: [&str; 3] = ["png", "ppm", "pnm"];

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{path}: cannot decode image: {message}")]
    Decode { path: PathBuf, message: String },
    #[error("{path}: unsupported image format (expected PNG or PPM)")]
    Format { path: PathBuf },
    #[error("{path}: cannot encode image: {message}")]
    Encode { path: PathBuf, message: String },
    #[error("{0}: no class directories found")]
    EmptyRoot(PathBuf),
    #[error("class `{class}` has no readable images")]
    EmptyClass { class: String },
    #[error("test fraction {0} must lie in [0, 1)")]
    Fraction(f64),
    #[error("{path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: ImageError,
    },
    #[error("{path}: invalid manifest: {message}")]
    Manifest { path: PathBuf, message: String },
}

impl DataError {
    pub fn io(path: &Path, source: io::Error) -> Self {
        DataError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleEntry {
    /// Path relative to the dataset root, `/`-separated.
    pub path: String,
    pub label: usize,
    /// SHA-256 of the file bytes.
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub root: String,
    pub classes: Vec<String>,
    /// `None` for a whole scanned folder.
    pub split: Option<Split>,
    pub samples: Vec<SampleEntry>,
    /// SHA-256 over classes, split and every sample entry.
    pub hash: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Skipped {
    pub path: PathBuf,
    pub reason: String,
}

#[derive(Debug, Clone)]
pub struct Scan {
    pub manifest: DatasetManifest,
    /// Files that were present but not usable as samples.
    pub skipped: Vec<Skipped>,
}

pub fn hex(bytes: &[u8]) -> String {
    bytes
        .iter()
        .fold(String::with_capacity(bytes.len() * 2), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        })
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex(&Sha256::digest(bytes))
}

impl DatasetManifest {
    pub fn compute_hash(
        classes: &[String],
        split: Option<Split>,
        samples: &[SampleEntry],
    ) -> String {
        let mut h = Sha256::new();
        h.update(format!("classes {}\n", classes.len()));
        for c in classes {
            h.update(c.as_bytes());
            h.update(b"\n");
        }
        h.update(format!("split {split:?}\nsamples {}\n", samples.len()));
        for s in samples {
            h.update(format!("{}\0{}\0{}\n", s.path, s.label, s.sha256));
        }
        hex(&h.finalize())
    }

    pub fn new(
        root: String,
        classes: Vec<String>,
        split: Option<Split>,
        samples: Vec<SampleEntry>,
    ) -> Self {
        let hash = Self::compute_hash(&classes, split, &samples);
        Self {
            root,
            classes,
            split,
            samples,
            hash,
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.classes.len()];
        for s in &self.samples {
            counts[s.label] += 1;
        }
        counts
    }

    /// Checks the invariants a manifest read from disk must satisfy.
    pub fn validate(&self, path: &Path) -> Result<(), DataError> {
        let bad = |message: String| DataError::Manifest {
            path: path.to_path_buf(),
            message,
        };
        if let Some(s) = self.samples.iter().find(|s| s.label >= self.classes.len()) {
            return Err(bad(format!("label {} of {} out of range", s.label, s.path)));
        }
        let mut paths: Vec<&str> = self.samples.iter().map(|s| s.path.as_str()).collect();
        paths.sort_unstable();
        if let Some(w) = paths.windows(2).find(|w| w[0] == w[1]) {
            return Err(bad(format!("duplicate sample {}", w[0])));
        }
        if Self::compute_hash(&self.classes, self.split, &self.samples) != self.hash {
            return Err(bad("content hash does not match sample list".into()));
        }
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self, DataError> {
        let text = fs::read_to_string(path).map_err(|e| DataError::io(path, e))?;
        let m: Self = serde_json::from_str(&text).map_err(|e| DataError::Manifest {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        m.validate(path)?;
        Ok(m)
    }

    pub fn sample_path(&self, entry: &SampleEntry) -> PathBuf {
        Path::new(&self.root).join(&entry.path)
    }
}

fn is_hidden(name: &str) -> bool {
    name.starts_with('.')
}

fn sorted_entries(dir: &Path) -> Result<Vec<(String, PathBuf)>, DataError> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| DataError::io(dir, e))? {
        let entry = entry.map_err(|e| DataError::io(dir, e))?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if !is_hidden(&name) {
            out.push((name, entry.path()));
        }
    }
    out.sort();
    Ok(out)
}

fn has_image_extension(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
}

/// Indexes `<root>/<class>/<image>`. Files that are not PNG/PPM or whose
/// header cannot be read are listed in [`Scan::skipped`].
pub fn scan_folder(root: &Path) -> Result<Scan, DataError> {
    let classes: Vec<(String, PathBuf)> = sorted_entries(root)?
        .into_iter()
        .filter(|(_, p)| p.is_dir())
        .collect();
    if classes.is_empty() {
        return Err(DataError::EmptyRoot(root.to_path_buf()));
    }
    let mut samples = Vec::new();
    let mut skipped = Vec::new();
    for (label, (class, dir)) in classes.iter().enumerate() {
        let mut found = 0;
        for (name, path) in sorted_entries(dir)? {
            if !path.is_file() {
                continue;
            }
            if !has_image_extension(&path) {
                skipped.push(Skipped {
                    path,
                    reason: "unsupported format".into(),
                });
                continue;
            }
            let bytes = fs::read(&path).map_err(|e| DataError::io(&path, e))?;
            match image::ImageReader::new(io::Cursor::new(&bytes))
                .with_guessed_format()
                .map_err(|e| e.to_string())
                .and_then(|r| r.into_dimensions().map_err(|e| e.to_string()))
            {
                Ok(_) => {
                    samples.push(SampleEntry {
                        path: format!("{class}/{name}"),
                        label,
                        sha256: sha256_hex(&bytes),
                    });
                    found += 1;
                }
                Err(reason) => skipped.push(Skipped { path, reason }),
            }
        }
        if found == 0 {
            return Err(DataError::EmptyClass {
                class: class.clone(),
            });
        }
    }
    let names = classes.into_iter().map(|(c, _)| c).collect();
    Ok(Scan {
        manifest: DatasetManifest::new(root.to_string_lossy().into_owned(), names, None, samples),
        skipped,
    })
}

/// Holds out `round(n_c · test_fraction)` samples of every class `c` for
/// testing, chosen by a seeded shuffle. Both parts keep manifest order.
pub fn stratified_split(
    manifest: &DatasetManifest,
    test_fraction: f64,
    seed: u64,
) -> Result<(DatasetManifest, DatasetManifest), DataError> {
    if !(0.0..1.0).contains(&test_fraction) {
        return Err(DataError::Fraction(test_fraction));
    }
    let mut is_test = vec![false; manifest.len()];
    for class in 0..manifest.classes.len() {
        let mut members: Vec<usize> = (0..manifest.len())
            .filter(|&i| manifest.samples[i].label == class)
            .collect();
        let take = (members.len() as f64 * test_fraction).round() as usize;
        members.shuffle(&mut stream_rng(seed, Stream::Split, class as u64, 0));
        for &i in &members[..take] {
            is_test[i] = true;
        }
    }
    let part = |want: bool, split: Split| {
        let samples = manifest
            .samples
            .iter()
            .zip(&is_test)
            .filter(|(_, &t)| t == want)
            .map(|(s, _)| s.clone())
            .collect();
        DatasetManifest::new(
            manifest.root.clone(),
            manifest.classes.clone(),
            Some(split),
            samples,
        )
    };
    Ok((part(false, Split::Train), part(true, Split::Test)))
}

fn to_image(img: DynamicImage, channels: usize, path: &Path) -> Result<Image, DataError> {
    let sixteen = matches!(
        img.color(),
        image::ColorType::L16
            | image::ColorType::La16
            | image::ColorType::Rgb16
            | image::ColorType::Rgba16
    );
    let (w, h) = (img.width() as usize, img.height() as usize);
    let pixels: Vec<f64> = match (channels, sixteen) {
        (1, false) => img
            .to_luma8()
            .into_raw()
            .into_iter()
            .map(|v| v as f64 / 255.0)
            .collect(),
        (1, true) => img
            .to_luma16()
            .into_raw()
            .into_iter()
            .map(|v| v as f64 / 65535.0)
            .collect(),
        (_, false) => img
            .to_rgb8()
            .into_raw()
            .into_iter()
            .map(|v| v as f64 / 255.0)
            .collect(),
        (_, true) => img
            .to_rgb16()
            .into_raw()
            .into_iter()
            .map(|v| v as f64 / 65535.0)
            .collect(),
    };
    let image = Image::new(h, w, channels, pixels).map_err(|source| DataError::Image {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(image.with_source_bits(if sixteen { 16 } else { 8 }))
}

/// Decodes a PNG or PPM file into `channels` (1 = luma, 3 = RGB) with
/// values in `[0, 1]`.
pub fn decode(path: &Path, channels: usize) -> Result<Image, DataError> {
    if !has_image_extension(path) {
        return Err(DataError::Format {
            path: path.to_path_buf(),
        });
    }
    let reader = ImageReader::open(path)
        .map_err(|e| DataError::io(path, e))?
        .with_guessed_format()
        .map_err(|e| DataError::io(path, e))?;
    let img = reader.decode().map_err(|e| DataError::Decode {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    to_image(img, channels, path)
}

/// [`decode`] followed by a bilinear resize to `height × width`.
pub fn decode_and_resize(
    path: &Path,
    height: usize,
    width: usize,
    channels: usize,
) -> Result<Image, DataError> {
    let img = decode(path, channels)?;
    img.resize_bilinear(height, width)
        .map_err(|source| DataError::Image {
            path: path.to_path_buf(),
            source,
        })
}

fn quantize8(img: &Image) -> Vec<u8> {
    img.pixels()
        .iter()
        .map(|v| (v * 255.0).round() as u8)
        .collect()
}

fn quantize16(img: &Image) -> Vec<u16> {
    img.pixels()
        .iter()
        .map(|v| (v * 65535.0).round() as u16)
        .collect()
}

fn dynamic(img: &Image, bits: u8) -> DynamicImage {
    let (w, h) = (img.width() as u32, img.height() as u32);
    match (img.channels(), bits) {
        (1, 16) => {
            DynamicImage::ImageLuma16(image::ImageBuffer::from_raw(w, h, quantize16(img)).unwrap())
        }
        (1, _) => {
            DynamicImage::ImageLuma8(image::ImageBuffer::from_raw(w, h, quantize8(img)).unwrap())
        }
        (_, 16) => {
            DynamicImage::ImageRgb16(image::ImageBuffer::from_raw(w, h, quantize16(img)).unwrap())
        }
        (_, _) => {
            DynamicImage::ImageRgb8(image::ImageBuffer::from_raw(w, h, quantize8(img)).unwrap())
        }
    }
}

/// Writes an 8- or 16-bit PNG.
pub fn save_png(img: &Image, path: &Path, bits: u8) -> Result<(), DataError> {
    dynamic(img, bits)
        .save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| DataError::Encode {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
}

/// Writes an 8-bit binary PPM (P6), or PGM (P5) for one channel.
pub fn save_ppm(img: &Image, path: &Path) -> Result<(), DataError> {
    let kind = if img.channels() == 1 { "P5" } else { "P6" };
    let mut bytes = format!("{kind}\n{} {}\n255\n", img.width(), img.height()).into_bytes();
    bytes.extend(quantize8(img));
    fs::write(path, bytes).map_err(|e| DataError::io(path, e))
}

/// Decodes every sample of `manifest` at `height × width × channels`, in
/// manifest order.
pub fn load_samples(
    manifest: &DatasetManifest,
    height: usize,
    width: usize,
    channels: usize,
    threads: usize,
) -> Result<Vec<(Image, usize)>, DataError> {
    par_map(&manifest.samples, threads, |s| {
        let img = decode_and_resize(&manifest.sample_path(s), height, width, channels)?;
        Ok((img, s.label))
    })
}
