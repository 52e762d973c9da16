//! `H×W×C` raster with pixel values in `[0, 1]`.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ImageError {
    #[error("image has zero extent ({height}x{width})")]
    Empty { height: usize, width: usize },
    #[error("unsupported channel count {0}; expected 1 or 3")]
    Channels(usize),
    #[error("pixel buffer of length {len} does not fit {height}x{width}x{channels}")]
    Length {
        height: usize,
        width: usize,
        channels: usize,
        len: usize,
    },
    #[error("pixel value {value} at index {index} is outside [0, 1]")]
    OutOfRange { index: usize, value: f64 },
}

/// Interleaved row-major image: pixel `(y, x)` channel `c` lives at
/// `(y * width + x) * channels + c`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Image {
    height: usize,
    width: usize,
    channels: usize,
    pixels: Vec<f64>,
    /// Bit depth of the file this image was decoded from, if any.
    source_bits: Option<u8>,
}

impl Image {
    pub fn new(
        height: usize,
        width: usize,
        channels: usize,
        pixels: Vec<f64>,
    ) -> Result<Self, ImageError> {
        if height == 0 || width == 0 {
            return Err(ImageError::Empty { height, width });
        }
        if channels != 1 && channels != 3 {
            return Err(ImageError::Channels(channels));
        }
        if pixels.len() != height * width * channels {
            return Err(ImageError::Length {
                height,
                width,
                channels,
                len: pixels.len(),
            });
        }
        if let Some((index, &value)) = pixels
            .iter()
            .enumerate()
            .find(|(_, v)| !(0.0..=1.0).contains(*v))
        {
            return Err(ImageError::OutOfRange { index, value });
        }
        Ok(Self {
            height,
            width,
            channels,
            pixels,
            source_bits: None,
        })
    }

    pub fn filled(
        height: usize,
        width: usize,
        channels: usize,
        value: f64,
    ) -> Result<Self, ImageError> {
        Self::new(
            height,
            width,
            channels,
            vec![value; height * width * channels],
        )
    }

    pub fn with_source_bits(mut self, bits: u8) -> Self {
        self.source_bits = Some(bits);
        self
    }

    pub fn source_bits(&self) -> Option<u8> {
        self.source_bits
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn into_pixels(self) -> Vec<f64> {
        self.pixels
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> f64 {
        self.pixels[(y * self.width + x) * self.channels + c]
    }

    pub fn mean(&self) -> f64 {
        self.pixels.iter().sum::<f64>() / self.pixels.len() as f64
    }

    /// Bilinear resampling with pixel centers at half-integer coordinates and
    /// edge clamping; no antialiasing pre-filter. Resizing to the current
    /// size returns an identical image.
    pub fn resize_bilinear(&self, height: usize, width: usize) -> Result<Self, ImageError> {
        if height == 0 || width == 0 {
            return Err(ImageError::Empty { height, width });
        }
        let axis = |out: usize, src: usize| -> Vec<(usize, usize, f64)> {
            let scale = src as f64 / out as f64;
            (0..out)
                .map(|o| {
                    let pos = ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, (src - 1) as f64);
                    let lo = libm::floor(pos) as usize;
                    let hi = (lo + 1).min(src - 1);
                    (lo, hi, pos - lo as f64)
                })
                .collect()
        };
        let rows = axis(height, self.height);
        let cols = axis(width, self.width);
        let c = self.channels;
        let mut pixels = Vec::with_capacity(height * width * c);
        for &(y0, y1, fy) in &rows {
            for &(x0, x1, fx) in &cols {
                for ch in 0..c {
                    let top = self.get(y0, x0, ch) * (1.0 - fx) + self.get(y0, x1, ch) * fx;
                    let bottom = self.get(y1, x0, ch) * (1.0 - fx) + self.get(y1, x1, ch) * fx;
                    pixels.push((top * (1.0 - fy) + bottom * fy).clamp(0.0, 1.0));
                }
            }
        }
        Ok(Self {
            height,
            width,
            channels: c,
            pixels,
            source_bits: self.source_bits,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_inputs() {
        assert!(matches!(
            Image::new(0, 2, 1, vec![]),
            Err(ImageError::Empty { .. })
        ));
        assert_eq!(
            Image::new(1, 1, 2, vec![0.0; 2]),
            Err(ImageError::Channels(2))
        );
        assert!(matches!(
            Image::new(2, 2, 1, vec![0.0; 3]),
            Err(ImageError::Length { .. })
        ));
        assert!(matches!(
            Image::new(1, 2, 1, vec![0.5, 1.5]),
            Err(ImageError::OutOfRange { index: 1, .. })
        ));
    }

    #[test]
    fn resize_to_same_size_is_identity() {
        let px: Vec<f64> = (0..5 * 3 * 3).map(|i| (i % 7) as f64 / 7.0).collect();
        let img = Image::new(5, 3, 3, px).unwrap();
        assert_eq!(img.resize_bilinear(5, 3).unwrap(), img);
    }

    #[test]
    fn checkerboard_upscale_matches_hand_weights() {
        // source [[0,1],[1,0]]; output sample positions along each axis are
        // -0.25→0, 0.25, 0.75, 1.25→1 in source coordinates.
        let img = Image::new(2, 2, 1, vec![0.0, 1.0, 1.0, 0.0]).unwrap();
        let up = img.resize_bilinear(4, 4).unwrap();
        let w = [0.0, 0.25, 0.75, 1.0];
        for (y, &fy) in w.iter().enumerate() {
            for (x, &fx) in w.iter().enumerate() {
                let top = fx;
                let bottom = 1.0 - fx;
                let expected = top * (1.0 - fy) + bottom * fy;
                assert!((up.get(y, x, 0) - expected).abs() < 1e-15, "({y},{x})");
            }
        }
    }

    #[test]
    fn constant_image_stays_constant() {
        let img = Image::filled(3, 7, 3, 0.4).unwrap();
        let out = img.resize_bilinear(11, 2).unwrap();
        assert!(out.pixels().iter().all(|&v| (v - 0.4).abs() < 1e-15));
    }
}
