//! Paired noisy sub-image generation and frequency-selected routing.
//!
//! Two half-resolution sub-images are drawn from each noisy image by
//! picking two distinct pixels from every non-overlapping 2x2 cell. The
//! routing decision then sends the sub-image with the larger
//! high-frequency energy ratio through the network and keeps the other as
//! the regression target.

use crate::error::{Error, Result};
use crate::image::Image;
use crate::rng::{domain, stream};
use crate::spectrum::hf_ratio;
use rand::Rng;

/// Ties in the routing comparison (|difference| below this) keep the
/// first sub-image as input, deterministically.
pub const FSD_TIE_EPS: f64 = 1e-12;

/// A routed pair: `input_img` goes through the network, `target_img` is
/// the regression target. `swapped` records whether routing exchanged
/// the raw pair order.
#[derive(Debug, Clone)]
pub struct NoisePair {
    pub input_img: Image,
    pub target_img: Image,
    pub swapped: bool,
    pub hf_input: f64,
    pub hf_target: f64,
}

/// Per-cell choice of two distinct pixel positions, each in 0..4
/// (row-major within the 2x2 cell).
pub fn neighbor_positions(h: usize, w: usize, seed: u64) -> Result<Vec<(u8, u8)>> {
    if h % 2 != 0 || w % 2 != 0 || h == 0 || w == 0 {
        return Err(Error::shape(format!("neighbor sub-sampling needs even extents, got {h}x{w}")));
    }
    let cells = (h / 2) * (w / 2);
    let mut out = Vec::with_capacity(cells);
    for cell in 0..cells {
        let mut rng = stream(seed, domain::PAIRGEN, cell as u64);
        let first: u8 = rng.gen_range(0..4);
        let mut second: u8 = rng.gen_range(0..3);
        if second >= first {
            second += 1;
        }
        out.push((first, second));
    }
    Ok(out)
}

/// Extract the two sub-images selected by per-cell positions. Works on
/// any image with matching even extents, which lets the clean source be
/// sub-sampled at exactly the same positions as its noisy version.
pub fn subsample_at(img: &Image, positions: &[(u8, u8)]) -> Result<(Image, Image)> {
    let (h, w) = (img.height, img.width);
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::shape(format!("neighbor sub-sampling needs even extents, got {h}x{w}")));
    }
    let (h2, w2) = (h / 2, w / 2);
    if positions.len() != h2 * w2 {
        return Err(Error::shape(format!(
            "position table has {} cells, image has {}",
            positions.len(),
            h2 * w2
        )));
    }
    let mut sub1 = Image::zeros(img.channels, h2, w2);
    let mut sub2 = Image::zeros(img.channels, h2, w2);
    for ci in 0..h2 {
        for cj in 0..w2 {
            let (p1, p2) = positions[ci * w2 + cj];
            let (i1, j1) = (2 * ci + (p1 / 2) as usize, 2 * cj + (p1 % 2) as usize);
            let (i2, j2) = (2 * ci + (p2 / 2) as usize, 2 * cj + (p2 % 2) as usize);
            for c in 0..img.channels {
                sub1.set_pixel(c, ci, cj, img.pixel(c, i1, j1));
                sub2.set_pixel(c, ci, cj, img.pixel(c, i2, j2));
            }
        }
    }
    Ok((sub1, sub2))
}

/// Draw a fresh position table and produce the two sub-images.
pub fn neighbor_pairs(img: &Image, seed: u64) -> Result<(Image, Image)> {
    let positions = neighbor_positions(img.height, img.width, seed)?;
    subsample_at(img, &positions)
}

/// Frequency Selection Decision: the sub-image with strictly larger
/// high-frequency ratio becomes the network input; ties keep `sub1`.
pub fn fsd_route(sub1: &Image, sub2: &Image, r_c: f64) -> Result<NoisePair> {
    if !sub1.same_shape(sub2) {
        return Err(Error::shape(format!(
            "fsd_route: sub-images {}x{}x{} vs {}x{}x{}",
            sub1.channels, sub1.height, sub1.width, sub2.channels, sub2.height, sub2.width
        )));
    }
    let hf1 = hf_ratio(sub1, r_c)?;
    let hf2 = hf_ratio(sub2, r_c)?;
    if hf2 - hf1 > FSD_TIE_EPS {
        Ok(NoisePair {
            input_img: sub2.clone(),
            target_img: sub1.clone(),
            swapped: true,
            hf_input: hf2,
            hf_target: hf1,
        })
    } else {
        Ok(NoisePair {
            input_img: sub1.clone(),
            target_img: sub2.clone(),
            swapped: false,
            hf_input: hf1,
            hf_target: hf2,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_image_gives_equal_subs() {
        let img = Image::from_plane(4, 4, vec![0.6; 16]).unwrap();
        let (s1, s2) = neighbor_pairs(&img, 3).unwrap();
        assert!(s1.data.iter().all(|v| *v == 0.6));
        assert!(s2.data.iter().all(|v| *v == 0.6));
    }

    #[test]
    fn single_cell_draws_distinct_positions() {
        let img = Image::from_plane(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        for seed in 0..50 {
            let pos = neighbor_positions(2, 2, seed).unwrap();
            let (p1, p2) = pos[0];
            assert_ne!(p1, p2);
            let (s1, s2) = subsample_at(&img, &pos).unwrap();
            assert_ne!(s1.data[0], s2.data[0]);
            assert!(img.data.contains(&s1.data[0]));
            assert!(img.data.contains(&s2.data[0]));
        }
    }

    #[test]
    fn odd_dimensions_rejected() {
        let img = Image::zeros(1, 5, 4);
        assert!(neighbor_pairs(&img, 0).is_err());
    }

    #[test]
    fn membership_and_distinctness_audit_on_ramp() {
        // Every output pixel must come from its source cell, and the two
        // sub-images must always use different cell positions. A ramp
        // makes all 64 values distinct so membership is checkable by value.
        let img = Image::from_plane(8, 8, (0..64).map(|i| i as f64).collect()).unwrap();
        let (s1, s2) = neighbor_pairs(&img, 12345).unwrap();
        for ci in 0..4 {
            for cj in 0..4 {
                let cell: Vec<f64> = (0..4)
                    .map(|p| img.pixel(0, 2 * ci + p / 2, 2 * cj + p % 2))
                    .collect();
                let v1 = s1.pixel(0, ci, cj);
                let v2 = s2.pixel(0, ci, cj);
                assert!(cell.contains(&v1));
                assert!(cell.contains(&v2));
                assert_ne!(v1, v2, "positions must differ in every cell");
            }
        }
    }

    #[test]
    fn pair_generation_is_deterministic() {
        let img = Image::from_plane(8, 8, (0..64).map(|i| (i as f64 * 0.71).sin()).collect())
            .unwrap();
        let a = neighbor_pairs(&img, 9).unwrap();
        let b = neighbor_pairs(&img, 9).unwrap();
        assert_eq!(a.0.data, b.0.data);
        assert_eq!(a.1.data, b.1.data);
    }

    #[test]
    fn position_pair_marginals_are_uniform() {
        // Each of the 12 ordered pairs should appear with frequency 1/12.
        let trials: usize = 12_000;
        let mut counts = [[0usize; 4]; 4];
        for seed in 0..trials as u64 {
            let pos = neighbor_positions(2, 2, seed).unwrap();
            let (a, b) = pos[0];
            counts[a as usize][b as usize] += 1;
        }
        let p = 1.0 / 12.0;
        let sigma = (trials as f64 * p * (1.0 - p)).sqrt();
        for a in 0..4 {
            for b in 0..4 {
                if a == b {
                    assert_eq!(counts[a][b], 0);
                } else {
                    let dev = (counts[a][b] as f64 - trials as f64 * p).abs();
                    assert!(dev < 3.0 * sigma, "pair ({a},{b}) count {} off", counts[a][b]);
                }
            }
        }
    }

    #[test]
    fn routing_prefers_high_frequency_input() {
        let flat = Image::from_plane(8, 8, vec![0.5; 64]).unwrap();
        let mut checker = Image::zeros(1, 8, 8);
        for i in 0..8 {
            for j in 0..8 {
                checker.set_pixel(0, i, j, if (i + j) % 2 == 0 { 1.0 } else { 0.0 });
            }
        }
        let pair = fsd_route(&flat, &checker, 0.25).unwrap();
        assert!(pair.swapped);
        assert_eq!(pair.input_img.data, checker.data);
        assert_eq!(pair.hf_input, 1.0);
        assert_eq!(pair.hf_target, 0.0);
    }

    #[test]
    fn routing_tie_keeps_first() {
        let img = Image::from_plane(4, 4, (0..16).map(|i| (i as f64 * 0.3).cos()).collect())
            .unwrap();
        let pair = fsd_route(&img, &img, 0.25).unwrap();
        assert!(!pair.swapped);
        assert_eq!(pair.input_img.data, img.data);
    }

    #[test]
    fn routing_is_order_invariant_when_ratios_differ() {
        let a = Image::from_plane(8, 8, (0..64).map(|i| (i as f64 * 0.17).sin()).collect())
            .unwrap();
        let b = Image::from_plane(8, 8, (0..64).map(|i| (i as f64 * 1.93).sin()).collect())
            .unwrap();
        let ab = fsd_route(&a, &b, 0.25).unwrap();
        let ba = fsd_route(&b, &a, 0.25).unwrap();
        assert!((ab.hf_input - ba.hf_input).abs() < 1e-15);
        assert_eq!(ab.input_img.data, ba.input_img.data);
    }
}
