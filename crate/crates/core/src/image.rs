use std::path::Path;

use crate::error::{invalid, Result};
use crate::scalar::Real;

/// Interleaved RGB image, row-major, values nominally in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Image<T> {
    pub width: usize,
    pub height: usize,
    pub data: Vec<T>,
}

impl<T: Real> Image<T> {
    pub fn filled(width: usize, height: usize, rgb: [T; 3]) -> Self {
        let mut data = Vec::with_capacity(width * height * 3);
        for _ in 0..width * height {
            data.extend_from_slice(&rgb);
        }
        Self {
            width,
            height,
            data,
        }
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        Self::filled(width, height, [T::zero(); 3])
    }

    pub fn from_vec(width: usize, height: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != width * height * 3 {
            return invalid(format!(
                "image buffer of {} values does not match {width}x{height}x3",
                data.len()
            ));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    #[inline]
    pub fn pixel(&self, row: usize, col: usize) -> [T; 3] {
        let o = (row * self.width + col) * 3;
        [self.data[o], self.data[o + 1], self.data[o + 2]]
    }

    #[inline]
    pub fn set_pixel(&mut self, row: usize, col: usize, rgb: [T; 3]) {
        let o = (row * self.width + col) * 3;
        self.data[o..o + 3].copy_from_slice(&rgb);
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.width == other.width && self.height == other.height
    }

    /// One channel as a row-major plane.
    pub fn channel(&self, ch: usize) -> Vec<T> {
        self.data.iter().skip(ch).step_by(3).copied().collect()
    }

    /// Rec. 601 luma.
    pub fn grayscale(&self) -> Vec<T> {
        let (r, g, b) = (T::lit(0.299), T::lit(0.587), T::lit(0.114));
        self.data
            .chunks_exact(3)
            .map(|p| r * p[0] + g * p[1] + b * p[2])
            .collect()
    }

    pub fn clamped(&self) -> Self {
        Self {
            width: self.width,
            height: self.height,
            data: self
                .data
                .iter()
                .map(|v| v.max(T::zero()).min(T::one()))
                .collect(),
        }
    }

    pub fn cast<U: Real>(&self) -> Image<U> {
        Image {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|v| U::lit(v.as_f64())).collect(),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let img = image::open(path)?.to_rgb32f();
        let (w, h) = img.dimensions();
        let data = img.into_raw().into_iter().map(|v| T::lit(v as f64)).collect();
        Self::from_vec(w as usize, h as usize, data)
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        let bytes: Vec<u8> = self
            .data
            .iter()
            .map(|v| (v.as_f64().clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect();
        image::save_buffer(
            path,
            &bytes,
            self.width as u32,
            self.height as u32,
            image::ExtendedColorType::Rgb8,
        )?;
        Ok(())
    }
}
