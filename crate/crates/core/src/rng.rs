//! Deterministic random streams.
//!
//! Every random decision in the crate draws from a ChaCha8 stream keyed by
//! `(seed, domain, index)`. ChaCha is a counter-based generator, so a stream
//! is a pure function of its key: the noise value at a pixel, the pixel
//! choice in a sub-sampling cell, or a layer's initial weights depend only
//! on the identifying triple, never on the order in which other streams
//! were consumed. That makes every derived quantity reproducible bit-for-bit
//! and safe to compute concurrently.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Stream domains. Each random purpose gets its own namespace so that
/// equal indices in different contexts never collide.
pub mod domain {
    /// Per-pixel noise fields.
    pub const NOISE: u64 = 1;
    /// Per-cell pixel choices in neighbor sub-sampling.
    pub const PAIRGEN: u64 = 2;
    /// Per-(epoch, image) patch crop offsets.
    pub const CROP: u64 = 3;
    /// Per-layer parameter initialization.
    pub const INIT: u64 = 4;
    /// Per-image noise-level draws for ranged noise models.
    pub const LEVEL: u64 = 5;
    /// Power-iteration start vectors.
    pub const POWER: u64 = 6;
    /// Procedural texture corpus.
    pub const CORPUS: u64 = 7;
    /// Per-image noise sub-seeds.
    pub const IMAGE_NOISE: u64 = 8;
    /// Per-epoch dataset shuffling.
    pub const SHUFFLE: u64 = 9;
    /// Probe pair construction.
    pub const PROBE: u64 = 10;
}

const TAG: u64 = 0x5345_4c44_454e_3031;

/// The stream identified by `(seed, domain, index)`.
pub fn stream(seed: u64, domain: u64, index: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[0..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&domain.to_le_bytes());
    key[16..24].copy_from_slice(&index.to_le_bytes());
    key[24..32].copy_from_slice(&TAG.to_le_bytes());
    ChaCha8Rng::from_seed(key)
}

/// A 64-bit sub-seed derived from `(seed, domain, index)`, for handing a
/// whole seeded sub-process (noise field, pair generation) its own root.
pub fn derive_seed(seed: u64, domain: u64, index: u64) -> u64 {
    stream(seed, domain, index).next_u64()
}
