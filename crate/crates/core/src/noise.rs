//! Seeded synthetic noise generators.
//!
//! Each pixel draws from its own ChaCha8 stream keyed by (seed, pixel
//! index), so noise fields are pure functions of `(input, seed)` and do
//! not depend on traversal order. Noisy values are not clipped to `[0, 1]`
//! here — clipping would bias the noise mean — only on image export.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::rng::{domain, stream};

/// Poisson means below this go through exact CDF inversion; above it a
/// rounded normal approximation is used.
pub const POISSON_INVERSION_LIMIT: f64 = 30.0;

/// The four experimental noise settings. Sigma is expressed in 0-255
/// units; lambda is the Poisson event rate at intensity 1.0.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", deny_unknown_fields, rename_all = "snake_case")]
pub enum NoiseModel {
    GaussianFixed { sigma: f64, seed: u64 },
    GaussianRange { sigma_min: f64, sigma_max: f64, seed: u64 },
    PoissonFixed { lambda: f64, seed: u64 },
    PoissonRange { lambda_min: f64, lambda_max: f64, seed: u64 },
}

impl NoiseModel {
    pub fn seed(&self) -> u64 {
        match self {
            NoiseModel::GaussianFixed { seed, .. }
            | NoiseModel::GaussianRange { seed, .. }
            | NoiseModel::PoissonFixed { seed, .. }
            | NoiseModel::PoissonRange { seed, .. } => *seed,
        }
    }

    pub fn with_seed(mut self, new_seed: u64) -> NoiseModel {
        match &mut self {
            NoiseModel::GaussianFixed { seed, .. }
            | NoiseModel::GaussianRange { seed, .. }
            | NoiseModel::PoissonFixed { seed, .. }
            | NoiseModel::PoissonRange { seed, .. } => *seed = new_seed,
        }
        self
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            NoiseModel::GaussianFixed { sigma, .. } if sigma < 0.0 => {
                Err(Error::config(format!("negative sigma {sigma}")))
            }
            NoiseModel::GaussianRange { sigma_min, sigma_max, .. }
                if sigma_min < 0.0 || sigma_min > sigma_max =>
            {
                Err(Error::config(format!("bad sigma range [{sigma_min}, {sigma_max}]")))
            }
            NoiseModel::PoissonFixed { lambda, .. } if lambda <= 0.0 => {
                Err(Error::config(format!("lambda must be positive, got {lambda}")))
            }
            NoiseModel::PoissonRange { lambda_min, lambda_max, .. }
                if lambda_min <= 0.0 || lambda_min > lambda_max =>
            {
                Err(Error::config(format!("bad lambda range [{lambda_min}, {lambda_max}]")))
            }
            _ => Ok(()),
        }
    }
}

/// Add i.i.d. Gaussian noise with standard deviation `sigma255 / 255`.
pub fn add_gaussian(img: &Image, sigma255: f64, seed: u64) -> Result<Image> {
    if sigma255 < 0.0 {
        return Err(Error::config(format!("negative sigma {sigma255}")));
    }
    let std = sigma255 / 255.0;
    let mut out = img.clone();
    for (i, v) in out.data.iter_mut().enumerate() {
        let n: f64 = stream(seed, domain::NOISE, i as u64).sample(StandardNormal);
        *v += std * n;
    }
    Ok(out)
}

/// Sample `y ~ Poisson(lambda * x)` per pixel and return `y / lambda`.
pub fn add_poisson(img: &Image, lambda: f64, seed: u64) -> Result<Image> {
    if lambda <= 0.0 {
        return Err(Error::config(format!("lambda must be positive, got {lambda}")));
    }
    let mut out = img.clone();
    for (i, v) in out.data.iter_mut().enumerate() {
        let mean = (lambda * *v).max(0.0);
        let mut rng = stream(seed, domain::NOISE, i as u64);
        let count = if mean < POISSON_INVERSION_LIMIT {
            poisson_inversion(mean, rng.gen::<f64>())
        } else {
            let z: f64 = rng.sample(StandardNormal);
            (mean + mean.sqrt() * z).round().max(0.0)
        };
        *v = count / lambda;
    }
    Ok(out)
}

/// Exact Poisson sampling by CDF inversion: smallest k with F(k) >= u.
fn poisson_inversion(mean: f64, u: f64) -> f64 {
    if mean == 0.0 {
        return 0.0;
    }
    let mut p = (-mean).exp();
    let mut cdf = p;
    let mut k = 0.0f64;
    // The tail bound keeps pathological u (rounded to 1.0) terminating.
    let k_max = mean + 60.0 * mean.sqrt().max(1.0);
    while u > cdf && k < k_max {
        k += 1.0;
        p *= mean / k;
        cdf += p;
    }
    k
}

/// Draw the concrete noise level for one image: fixed kinds return the
/// constant, ranged kinds draw uniformly from `[lo, hi]`.
pub fn sample_level(model: &NoiseModel, seed: u64) -> f64 {
    match *model {
        NoiseModel::GaussianFixed { sigma, .. } => sigma,
        NoiseModel::PoissonFixed { lambda, .. } => lambda,
        NoiseModel::GaussianRange { sigma_min, sigma_max, .. } => {
            if sigma_min == sigma_max {
                sigma_min
            } else {
                stream(seed, domain::LEVEL, 0).gen_range(sigma_min..=sigma_max)
            }
        }
        NoiseModel::PoissonRange { lambda_min, lambda_max, .. } => {
            if lambda_min == lambda_max {
                lambda_min
            } else {
                stream(seed, domain::LEVEL, 0).gen_range(lambda_min..=lambda_max)
            }
        }
    }
}

/// Apply the model to one image. `image_index` separates the level draw
/// and the noise field of different images under one model seed.
pub fn apply(model: &NoiseModel, img: &Image, image_index: u64) -> Result<Image> {
    model.validate()?;
    let level_seed = crate::rng::derive_seed(model.seed(), domain::LEVEL, image_index);
    let field_seed = crate::rng::derive_seed(model.seed(), domain::IMAGE_NOISE, image_index);
    let level = sample_level(model, level_seed);
    match model {
        NoiseModel::GaussianFixed { .. } | NoiseModel::GaussianRange { .. } => {
            add_gaussian(img, level, field_seed)
        }
        NoiseModel::PoissonFixed { .. } | NoiseModel::PoissonRange { .. } => {
            add_poisson(img, level, field_seed)
        }
    }
}
