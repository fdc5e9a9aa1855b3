//! Spectrum module vs the direct-sum DFT oracle, plus the transform-level
//! invariants (round trip, Parseval, partition additivity, path agreement).

use rand::Rng;
use specden::image::Image;
use specden::rng::stream;
use specden::spectrum::{self, band_masks, band_similarity, dft2, hf_ratio, idft2};
use specden_reference as oracle;

fn rand_plane(seed: u64, n: usize) -> Vec<f64> {
    let mut rng = stream(seed, 98, 0);
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

#[test]
fn dft2_matches_direct_sum_oracle() {
    for (seed, h, w) in [(1u64, 4usize, 4usize), (2, 8, 8), (3, 6, 5), (4, 7, 4)] {
        let img = rand_plane(seed, h * w);
        let spec = dft2(&img, h, w).unwrap();
        let (re, im) = oracle::dft2_direct(&img, h, w);
        for u in 0..h {
            for v in 0..w {
                let c = spec.at(u, v);
                assert!(
                    (c.re - re[u * w + v]).abs() < 1e-10 && (c.im - im[u * w + v]).abs() < 1e-10,
                    "{h}x{w} bin ({u},{v}): {c} vs ({}, {})",
                    re[u * w + v],
                    im[u * w + v]
                );
            }
        }
    }
}

#[test]
fn inverse_reproduces_source() {
    for (seed, h, w) in [(10u64, 8usize, 8usize), (11, 5, 9), (12, 16, 16), (13, 12, 10)] {
        let img = rand_plane(seed, h * w);
        let spec = dft2(&img, h, w).unwrap();
        let back = idft2(&spec).unwrap();
        let max_err = img
            .iter()
            .zip(&back)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        assert!(max_err < 1e-10, "{h}x{w}: round-trip error {max_err}");
    }
}

#[test]
fn fft_and_direct_paths_agree() {
    // A power-of-two grid runs through the radix-2 path; embedding the
    // same rows in a non-power-of-two grid forces the direct path. Agree
    // per-bin on the shared subgrid structure is not meaningful, so
    // compare on the same grid: run the pow2 grid, then a direct-sum
    // oracle of the very same input.
    let img = rand_plane(20, 32 * 32);
    let spec = dft2(&img, 32, 32).unwrap();
    let (re, im) = oracle::dft2_direct(&img, 32, 32);
    for u in 0..32 {
        for v in 0..32 {
            let c = spec.at(u, v);
            assert!((c.re - re[u * 32 + v]).abs() < 1e-10);
            assert!((c.im - im[u * 32 + v]).abs() < 1e-10);
        }
    }
}

#[test]
fn parseval_holds() {
    for (seed, h, w) in [(30u64, 8usize, 8usize), (31, 6, 10)] {
        let img = rand_plane(seed, h * w);
        let spec = dft2(&img, h, w).unwrap();
        let spatial: f64 = img.iter().map(|v| v * v).sum::<f64>() * (h * w) as f64;
        let rel = (spec.energy() - spatial).abs() / spatial.abs().max(1e-300);
        assert!(rel < 1e-10, "Parseval violated: rel {rel}");
    }
}

#[test]
fn band_filters_sum_back_to_image() {
    let (h, w) = (8, 8);
    let img = rand_plane(40, h * w);
    let bands = band_masks(h, w, 4).unwrap();
    let mut acc = vec![0.0; h * w];
    for i in 0..4 {
        let f = spectrum::band_filter(&img, h, w, &bands, i).unwrap();
        for (a, v) in acc.iter_mut().zip(&f) {
            *a += v;
        }
    }
    for (a, b) in acc.iter().zip(&img) {
        assert!((a - b).abs() < 1e-9);
    }
}

#[test]
fn band_counts_match_radius_enumeration() {
    let (h, w, nb) = (8, 8, 4);
    let bands = band_masks(h, w, nb).unwrap();
    let mut want = vec![0usize; nb];
    let edges = bands.edges();
    for u in 0..h {
        for v in 0..w {
            let r = oracle::bin_radius(u, v, h, w);
            let mut b = nb - 1;
            for i in 0..nb {
                if r >= edges[i] && (r < edges[i + 1] || (i == nb - 1 && r <= edges[i + 1])) {
                    b = i;
                    break;
                }
            }
            want[b] += 1;
        }
    }
    assert_eq!(bands.counts(), want.as_slice());
}

#[test]
fn band_similarity_matches_brute_force_path() {
    let (h, w, nb) = (8, 8, 4);
    let a = rand_plane(50, h * w);
    let b = rand_plane(51, h * w);
    let bands = band_masks(h, w, nb).unwrap();
    let edges = bands.edges();
    for i in 0..nb {
        let got = band_similarity(&a, &b, h, w, &bands, i).unwrap();
        let fa = oracle::band_filter_direct(&a, h, w, edges[i], edges[i + 1], i == nb - 1);
        let fb = oracle::band_filter_direct(&b, h, w, edges[i], edges[i + 1], i == nb - 1);
        let want = oracle::cosine(&fa, &fb, 1e-12);
        assert!((got - want).abs() < 1e-9, "band {i}: {got} vs {want}");
    }
}

#[test]
fn hf_ratio_matches_energy_bucketing_oracle() {
    let (h, w) = (8, 8);
    let img = rand_plane(60, h * w);
    let got = hf_ratio(&Image::from_plane(h, w, img.clone()).unwrap(), 0.25).unwrap();
    let want = oracle::hf_ratio_direct(&img, h, w, 0.25);
    assert!((got - want).abs() < 1e-10, "{got} vs {want}");
}
