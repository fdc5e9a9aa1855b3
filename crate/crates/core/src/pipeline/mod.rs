//! Model assembly, the self-supervised training loop, and inference.

pub mod checkpoint;
pub mod corpus;
pub mod model;
pub mod train;

pub use model::{denoise, ConvLayer, UnetModel};
pub use train::{train, Adam, LipschitzRuntime, TrainOutcome, TrainSetup};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::ssr::SsrConfig;
use crate::tensor::Tensor;

/// Spectral-norm clamp settings.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct LipschitzConfig {
    /// Clamp threshold for every convolution layer.
    pub beta: f64,
    /// Power-iteration steps per training step (warm-started).
    pub train_iters: usize,
    /// Power-iteration steps for fresh-start verification.
    pub verify_iters: usize,
}

impl Default for LipschitzConfig {
    fn default() -> Self {
        LipschitzConfig { beta: 1.0, train_iters: 1, verify_iters: 50 }
    }
}

/// Frequency-selection routing settings.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct FsdConfig {
    /// Normalized radius separating "high frequency" energy.
    pub r_c: f64,
}

impl Default for FsdConfig {
    fn default() -> Self {
        FsdConfig { r_c: 0.25 }
    }
}

/// Which of the three mechanisms are active. The ablation grid toggles
/// these with everything else held fixed.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq, Default)]
pub struct Toggles {
    pub fsd: bool,
    pub lipschitz: bool,
    pub ssr: bool,
}

/// Encoder-decoder configuration.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub in_channels: usize,
    /// Channel width per encoder level, finest first.
    pub channels: Vec<usize>,
    pub bottleneck: usize,
    /// Conv kernel extent (odd).
    pub kernel: usize,
    pub ssr: SsrConfig,
    pub lipschitz: LipschitzConfig,
    pub fsd: FsdConfig,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            in_channels: 1,
            channels: vec![16, 32],
            bottleneck: 64,
            kernel: 3,
            ssr: SsrConfig::default(),
            lipschitz: LipschitzConfig::default(),
            fsd: FsdConfig::default(),
        }
    }
}

impl ModelConfig {
    pub fn levels(&self) -> usize {
        self.channels.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0 {
            return Err(Error::config("model: in_channels must be >= 1".to_string()));
        }
        if self.channels.is_empty() {
            return Err(Error::config("model: need at least one encoder level".to_string()));
        }
        if self.channels.iter().any(|c| *c == 0) || self.bottleneck == 0 {
            return Err(Error::config("model: channel widths must be >= 1".to_string()));
        }
        if self.kernel % 2 == 0 {
            return Err(Error::config(format!("model: kernel {} must be odd", self.kernel)));
        }
        if self.lipschitz.beta <= 0.0 {
            return Err(Error::config("model: lipschitz beta must be positive".to_string()));
        }
        if self.lipschitz.train_iters == 0 || self.lipschitz.verify_iters == 0 {
            return Err(Error::config("model: power-iteration counts must be >= 1".to_string()));
        }
        if !(0.0..=crate::spectrum::R_MAX).contains(&self.fsd.r_c) {
            return Err(Error::config(format!("model: fsd r_c {} out of range", self.fsd.r_c)));
        }
        self.ssr.validate()?;
        if self.ssr.placement >= self.levels() {
            return Err(Error::config(format!(
                "model: ssr placement level {} does not exist ({} levels)",
                self.ssr.placement,
                self.levels()
            )));
        }
        Ok(())
    }
}

/// Training-loop configuration.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Training patch extent; must be divisible by 2^levels.
    pub patch: usize,
    pub seed: u64,
    /// Record band-similarity curves every this many epochs.
    pub ipfs_every: usize,
    /// Bundled procedural corpus: image count and extent.
    pub corpus_images: usize,
    pub corpus_size: usize,
    /// Images held out as the fixed probe batch.
    pub probe_images: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            epochs: 30,
            batch_size: 4,
            patch: 32,
            seed: 1,
            ipfs_every: 1,
            corpus_images: 16,
            corpus_size: 128,
            probe_images: 4,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, levels: usize) -> Result<()> {
        if self.lr <= 0.0 || self.beta1 <= 0.0 || self.beta2 <= 0.0 || self.adam_eps <= 0.0 {
            return Err(Error::config("train: optimizer constants must be positive".to_string()));
        }
        if self.beta1 >= 1.0 || self.beta2 >= 1.0 {
            return Err(Error::config("train: Adam betas must be < 1".to_string()));
        }
        if self.epochs == 0 || self.batch_size == 0 || self.ipfs_every == 0 {
            return Err(Error::config("train: counts must be positive".to_string()));
        }
        if self.patch == 0 || self.patch % (1 << levels) != 0 {
            return Err(Error::config(format!(
                "train: patch {} must be divisible by 2^{levels}",
                self.patch
            )));
        }
        if self.corpus_images == 0 || self.corpus_size == 0 || self.probe_images == 0 {
            return Err(Error::config("train: corpus sizes must be positive".to_string()));
        }
        if self.corpus_size % 2 != 0 {
            return Err(Error::config("train: corpus extent must be even".to_string()));
        }
        if self.corpus_size / 2 < self.patch {
            return Err(Error::config(format!(
                "train: sub-images ({}) smaller than patch {}",
                self.corpus_size / 2,
                self.patch
            )));
        }
        Ok(())
    }
}

/// A single-image tensor (batch axis of one) from an image.
pub fn image_to_tensor(img: &Image) -> Tensor {
    Tensor::from_vec(&[1, img.channels, img.height, img.width], img.data.clone())
        .expect("image layout matches tensor layout")
}

/// Stack same-shaped images into one B x C x H x W tensor.
pub fn images_to_batch(imgs: &[&Image]) -> Result<Tensor> {
    if imgs.is_empty() {
        return Err(Error::shape("images_to_batch: empty batch".to_string()));
    }
    let (c, h, w) = (imgs[0].channels, imgs[0].height, imgs[0].width);
    let mut data = Vec::with_capacity(imgs.len() * c * h * w);
    for img in imgs {
        if (img.channels, img.height, img.width) != (c, h, w) {
            return Err(Error::shape("images_to_batch: mixed shapes".to_string()));
        }
        data.extend_from_slice(&img.data);
    }
    Tensor::from_vec(&[imgs.len(), c, h, w], data)
}

/// Batch item `b` of a B x C x H x W tensor as an image.
pub fn tensor_item_to_image(t: &Tensor, b: usize) -> Result<Image> {
    let s = t.shape();
    if s.len() != 4 || b >= s[0] {
        return Err(Error::shape(format!("tensor_item_to_image: item {b} of {s:?}")));
    }
    let per = s[1] * s[2] * s[3];
    Image::from_data(s[1], s[2], s[3], t.data()[b * per..(b + 1) * per].to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_configs_validate() {
        let m = ModelConfig::default();
        m.validate().unwrap();
        TrainConfig::default().validate(m.levels()).unwrap();
    }

    #[test]
    fn bad_configs_are_rejected() {
        let mut m = ModelConfig::default();
        m.kernel = 4;
        assert!(m.validate().is_err());
        let mut m = ModelConfig::default();
        m.ssr.placement = 5;
        assert!(m.validate().is_err());
        let mut t = TrainConfig::default();
        t.patch = 30; // not divisible by 4
        assert!(t.validate(2).is_err());
        let mut t = TrainConfig::default();
        t.corpus_size = 48; // sub-images 24 < patch 32
        assert!(t.validate(2).is_err());
    }

    #[test]
    fn image_tensor_round_trip() {
        let img = Image::from_data(2, 3, 4, (0..24).map(f64::from).collect()).unwrap();
        let t = image_to_tensor(&img);
        assert_eq!(t.shape(), &[1, 2, 3, 4]);
        let back = tensor_item_to_image(&t, 0).unwrap();
        assert_eq!(back.data, img.data);
    }
}
