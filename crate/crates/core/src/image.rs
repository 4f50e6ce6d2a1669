//! Float images in `[0, 1]`, stored height × width × channels.

use std::path::Path;

use image::imageops::FilterType;
use image::{DynamicImage, ImageBuffer, Luma, Rgb};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ImageTensor {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f32>,
}

impl ImageTensor {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 || channels == 0 {
            return Err(Error::Argument(format!(
                "image dimensions must be positive, got {height}x{width}x{channels}"
            )));
        }
        if data.len() != height * width * channels {
            return Err(Error::Argument(format!(
                "image buffer has {} values, expected {}",
                data.len(),
                height * width * channels
            )));
        }
        if let Some(v) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Argument(format!("pixel value {v} outside [0, 1]")));
        }
        Ok(Self { height, width, channels, data })
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f32) -> Self {
        Self {
            height,
            width,
            channels,
            data: vec![value.clamp(0.0, 1.0); height * width * channels],
        }
    }

    /// Builds an image from an unclipped buffer, clamping every value into `[0, 1]`.
    pub(crate) fn from_clamped(height: usize, width: usize, channels: usize, mut data: Vec<f32>) -> Self {
        debug_assert_eq!(data.len(), height * width * channels);
        for v in &mut data {
            *v = if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
        }
        Self { height, width, channels, data }
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

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    #[inline]
    pub fn index(&self, y: usize, x: usize, c: usize) -> usize {
        (y * self.width + x) * self.channels + c
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> f32 {
        self.data[self.index(y, x, c)]
    }

    /// Per-pixel luminance (ITU-R 601), or the single channel for grayscale.
    pub fn luminance(&self) -> Vec<f32> {
        let n = self.height * self.width;
        if self.channels < 3 {
            return (0..n).map(|i| self.data[i * self.channels]).collect();
        }
        (0..n)
            .map(|i| {
                let p = &self.data[i * self.channels..i * self.channels + 3];
                0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2]
            })
            .collect()
    }

    /// Decodes an image file, converting to `channels` (1 or 3) and resizing to
    /// `size`×`size` with bilinear interpolation.
    pub fn load(path: &Path, size: usize, channels: usize) -> Result<Self> {
        let img = image::open(path).map_err(|source| Error::Image { path: path.to_path_buf(), source })?;
        Self::from_dynamic(img, size, channels)
    }

    pub fn from_dynamic(img: DynamicImage, size: usize, channels: usize) -> Result<Self> {
        let img = if img.width() as usize != size || img.height() as usize != size {
            img.resize_exact(size as u32, size as u32, FilterType::Triangle)
        } else {
            img
        };
        let data: Vec<f32> = match channels {
            1 => img.to_luma8().into_raw().into_iter().map(|v| v as f32 / 255.0).collect(),
            3 => img.to_rgb8().into_raw().into_iter().map(|v| v as f32 / 255.0).collect(),
            c => return Err(Error::Config(format!("unsupported channel count {c}"))),
        };
        Self::new(size, size, channels, data)
    }

    /// Quantizes to 8 bits per channel and writes a PNG.
    pub fn save_png(&self, path: &Path) -> Result<()> {
        let raw: Vec<u8> = self.data.iter().map(|v| (v * 255.0).round() as u8).collect();
        let (w, h) = (self.width as u32, self.height as u32);
        let res = match self.channels {
            1 => ImageBuffer::<Luma<u8>, _>::from_raw(w, h, raw).map(|b| b.save(path)),
            3 => ImageBuffer::<Rgb<u8>, _>::from_raw(w, h, raw).map(|b| b.save(path)),
            c => return Err(Error::Argument(format!("cannot encode {c}-channel image"))),
        };
        match res {
            Some(r) => r.map_err(|source| Error::Image { path: path.to_path_buf(), source }),
            None => Err(Error::Argument("image buffer size mismatch".into())),
        }
    }

    pub fn max_abs_diff(&self, other: &Self) -> f32 {
        assert_eq!(self.shape(), other.shape());
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f32::max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_out_of_range_pixels() {
        assert!(ImageTensor::new(1, 1, 1, vec![1.5]).is_err());
        assert!(ImageTensor::new(1, 2, 1, vec![0.5]).is_err());
        assert!(ImageTensor::new(1, 1, 1, vec![0.5]).is_ok());
    }

    #[test]
    fn png_round_trip_preserves_8bit_values() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.png");
        let data: Vec<f32> = (0..4 * 4 * 3).map(|i| (i * 5) as f32 / 255.0).collect();
        let img = ImageTensor::new(4, 4, 3, data).unwrap();
        img.save_png(&path).unwrap();
        let back = ImageTensor::load(&path, 4, 3).unwrap();
        assert!(img.max_abs_diff(&back) < 1e-6);
    }
}
