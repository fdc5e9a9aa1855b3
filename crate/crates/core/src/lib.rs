//! Self-supervised denoising of paired noisy images with spectral control.
//!
//! The library trains a small encoder-decoder to map one noisy sub-image of
//! a scene onto another, and adds three mechanisms that steer what the
//! network learns in the frequency domain:
//!
//! * frequency-selected pair routing ([`pairgen`]): the sub-image with more
//!   high-frequency energy is the one sent through the network;
//! * spectral-norm clamping of every convolution ([`lipschitz`]): a
//!   power-iteration estimate of each layer's largest singular value is
//!   projected back under a threshold after each optimizer step;
//! * low-rank spectral separation and reconstruction ([`ssr`]): features are
//!   split into low/high-frequency parts, a small basis is generated, and
//!   the decoder feature is rebuilt by orthogonal projection onto its span.
//!
//! Training dynamics are observed with a per-frequency-band similarity
//! metric ([`spectrum`]) between the network output and either its noisy
//! regression target or the clean source.

pub mod error;
pub mod harness;
pub mod image;
pub mod lipschitz;
pub mod noise;
pub mod pairgen;
pub mod pipeline;
pub mod rng;
pub mod spectrum;
pub mod ssr;
pub mod tensor;

pub use error::{Error, Result};
pub use image::Image;
