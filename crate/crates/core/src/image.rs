//! Planar multi-channel image container.
//!
//! Pixel values are `f64` and nominally live in `[0, 1]`; operations that
//! can push them outside that range (noise synthesis in particular) do not
//! clip — clipping happens only on export.

use crate::error::{Error, Result};

/// Channel-major image: `data[c * h * w + i * w + j]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl Image {
    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Image { channels, height, width, data: vec![0.0; channels * height * width] }
    }

    pub fn from_data(channels: usize, height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != channels * height * width {
            return Err(Error::shape(format!(
                "image data length {} does not match {}x{}x{}",
                data.len(),
                channels,
                height,
                width
            )));
        }
        Ok(Image { channels, height, width, data })
    }

    /// Single-channel image from a plane.
    pub fn from_plane(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        Self::from_data(1, height, width, data)
    }

    pub fn plane(&self, c: usize) -> &[f64] {
        let n = self.height * self.width;
        &self.data[c * n..(c + 1) * n]
    }

    pub fn plane_mut(&mut self, c: usize) -> &mut [f64] {
        let n = self.height * self.width;
        &mut self.data[c * n..(c + 1) * n]
    }

    pub fn pixel(&self, c: usize, i: usize, j: usize) -> f64 {
        self.data[(c * self.height + i) * self.width + j]
    }

    pub fn set_pixel(&mut self, c: usize, i: usize, j: usize, v: f64) {
        self.data[(c * self.height + i) * self.width + j] = v;
    }

    /// Copy with every value clamped to `[0, 1]`, for export.
    pub fn clipped(&self) -> Image {
        let mut out = self.clone();
        for v in &mut out.data {
            *v = v.clamp(0.0, 1.0);
        }
        out
    }

    /// Rectangular crop, all channels.
    pub fn crop(&self, top: usize, left: usize, height: usize, width: usize) -> Result<Image> {
        if top + height > self.height || left + width > self.width {
            return Err(Error::shape(format!(
                "crop {}x{}+{}+{} exceeds image {}x{}",
                height, width, top, left, self.height, self.width
            )));
        }
        let mut out = Image::zeros(self.channels, height, width);
        for c in 0..self.channels {
            for i in 0..height {
                for j in 0..width {
                    out.set_pixel(c, i, j, self.pixel(c, top + i, left + j));
                }
            }
        }
        Ok(out)
    }

    pub fn same_shape(&self, other: &Image) -> bool {
        self.channels == other.channels
            && self.height == other.height
            && self.width == other.width
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plane_indexing_is_channel_major() {
        let mut img = Image::zeros(2, 2, 3);
        img.set_pixel(1, 1, 2, 7.0);
        assert_eq!(img.plane(1)[1 * 3 + 2], 7.0);
        assert_eq!(img.plane(0).iter().sum::<f64>(), 0.0);
    }

    #[test]
    fn crop_rejects_out_of_bounds() {
        let img = Image::zeros(1, 4, 4);
        assert!(img.crop(2, 2, 3, 1).is_err());
        assert!(img.crop(1, 1, 2, 2).is_ok());
    }

    #[test]
    fn clipping_bounds_values() {
        let img = Image::from_plane(1, 2, vec![-0.5, 1.5]).unwrap();
        let c = img.clipped();
        assert_eq!(c.data, vec![0.0, 1.0]);
    }
}
