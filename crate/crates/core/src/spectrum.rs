//! 2-D DFT machinery, radial band decomposition, the per-band image-pair
//! similarity metric, and the high-frequency energy ratio that drives pair
//! routing.
//!
//! Frequencies are indexed with DC at (0, 0) and measured by the centered
//! normalized radius `r(u, v) = sqrt((u'/H)^2 + (v'/W)^2)` with
//! `u' in [-H/2, H/2)`, so the largest representable radius is
//! `r_max = sqrt(2)/2`. The forward transform is unnormalized; the inverse
//! divides by `H*W`. Rows and columns go through a radix-2 FFT when their
//! length is a power of two and a direct O(n^2) summation otherwise; both
//! paths agree to 1e-10 and tests hold them to it.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::image::Image;

/// Largest centered normalized radius on any grid.
pub const R_MAX: f64 = std::f64::consts::FRAC_1_SQRT_2;

/// Tolerance below which a band-filtered image's norm counts as empty and
/// the similarity sentinel 0 is reported instead of a cosine.
pub const EMPTY_BAND_NORM: f64 = 1e-12;

/// Unnormalized 2-D DFT of a real plane; DC at index (0, 0).
#[derive(Debug, Clone)]
pub struct Spectrum2d {
    coeffs: Vec<Complex64>,
    h: usize,
    w: usize,
}

impl Spectrum2d {
    pub fn coeffs(&self) -> &[Complex64] {
        &self.coeffs
    }

    pub fn source_shape(&self) -> (usize, usize) {
        (self.h, self.w)
    }

    pub fn at(&self, u: usize, v: usize) -> Complex64 {
        self.coeffs[u * self.w + v]
    }

    /// Total squared magnitude, for Parseval checks.
    pub fn energy(&self) -> f64 {
        self.coeffs.iter().map(|c| c.norm_sqr()).sum()
    }
}

fn fft_inplace_pow2(data: &mut [Complex64], inverse: bool) {
    let n = data.len();
    if n <= 1 {
        return;
    }
    // Bit-reversal permutation.
    let mut j = 0usize;
    for i in 1..n {
        let mut bit = n >> 1;
        while j & bit != 0 {
            j ^= bit;
            bit >>= 1;
        }
        j |= bit;
        if i < j {
            data.swap(i, j);
        }
    }
    let sign = if inverse { 2.0 } else { -2.0 };
    let mut len = 2;
    while len <= n {
        let ang = sign * std::f64::consts::PI / len as f64;
        let wl = Complex64::new(ang.cos(), ang.sin());
        for start in (0..n).step_by(len) {
            let mut w = Complex64::new(1.0, 0.0);
            for k in 0..len / 2 {
                let a = data[start + k];
                let b = data[start + k + len / 2] * w;
                data[start + k] = a + b;
                data[start + k + len / 2] = a - b;
                w *= wl;
            }
        }
        len <<= 1;
    }
}

fn dft_direct(data: &[Complex64], inverse: bool) -> Vec<Complex64> {
    let n = data.len();
    let sign = if inverse { 2.0 } else { -2.0 };
    let mut out = vec![Complex64::new(0.0, 0.0); n];
    for (k, o) in out.iter_mut().enumerate() {
        let mut acc = Complex64::new(0.0, 0.0);
        for (i, v) in data.iter().enumerate() {
            let ang = sign * std::f64::consts::PI * (k * i % n) as f64 / n as f64;
            acc += v * Complex64::new(ang.cos(), ang.sin());
        }
        *o = acc;
    }
    out
}

fn fft_1d(data: &mut Vec<Complex64>, inverse: bool) {
    if data.len().is_power_of_two() {
        fft_inplace_pow2(data, inverse);
    } else {
        *data = dft_direct(data, inverse);
    }
}

fn transform_2d(buf: &mut [Complex64], h: usize, w: usize, inverse: bool) {
    let mut row = vec![Complex64::new(0.0, 0.0); w];
    for i in 0..h {
        row.copy_from_slice(&buf[i * w..(i + 1) * w]);
        fft_1d(&mut row, inverse);
        buf[i * w..(i + 1) * w].copy_from_slice(&row);
    }
    let mut col = vec![Complex64::new(0.0, 0.0); h];
    for j in 0..w {
        for i in 0..h {
            col[i] = buf[i * w + j];
        }
        fft_1d(&mut col, inverse);
        for i in 0..h {
            buf[i * w + j] = col[i];
        }
    }
}

/// Forward 2-D DFT of one plane (row-major, H x W).
pub fn dft2(plane: &[f64], h: usize, w: usize) -> Result<Spectrum2d> {
    if h == 0 || w == 0 || plane.len() != h * w {
        return Err(Error::shape(format!("dft2: plane length {} vs {h}x{w}", plane.len())));
    }
    let mut buf: Vec<Complex64> = plane.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    transform_2d(&mut buf, h, w, false);
    Ok(Spectrum2d { coeffs: buf, h, w })
}

/// Inverse of [`dft2`]. Returns the real part after asserting that the
/// imaginary residue is below `1e-10` of scale, which holds whenever the
/// spectrum is (numerically) Hermitian.
pub fn idft2(spec: &Spectrum2d) -> Result<Vec<f64>> {
    let (h, w) = (spec.h, spec.w);
    let mut buf = spec.coeffs.clone();
    transform_2d(&mut buf, h, w, true);
    let n = (h * w) as f64;
    let scale = (buf.iter().map(|c| c.norm()).fold(0.0f64, f64::max) / n).max(1.0);
    let mut out = vec![0.0; h * w];
    for (o, c) in out.iter_mut().zip(&buf) {
        let v = c / n;
        if v.im.abs() > 1e-10 * scale {
            return Err(Error::numeric(format!(
                "idft2: imaginary residue {} exceeds tolerance",
                v.im.abs()
            )));
        }
        *o = v.re;
    }
    Ok(out)
}

/// Centered normalized radius of DFT bin (u, v).
pub fn radius(u: usize, v: usize, h: usize, w: usize) -> f64 {
    let uc = if u < h.div_ceil(2) { u as f64 } else { u as f64 - h as f64 };
    let vc = if v < w.div_ceil(2) { v as f64 } else { v as f64 - w as f64 };
    let fu = uc / h as f64;
    let fv = vc / w as f64;
    (fu * fu + fv * fv).sqrt()
}

/// Partition of the DFT plane into equal-width radial annuli over
/// `[0, R_MAX]`. Band `i` holds radii in `[edges[i], edges[i+1])`; the
/// last band is closed above. DC always lands in band 0.
#[derive(Debug, Clone)]
pub struct BandSet {
    h: usize,
    w: usize,
    edges: Vec<f64>,
    band_of: Vec<u16>,
    counts: Vec<usize>,
}

/// Build the band partition for an H x W grid.
pub fn band_masks(h: usize, w: usize, num_bands: usize) -> Result<BandSet> {
    if num_bands == 0 {
        return Err(Error::config("band_masks: need at least one band".to_string()));
    }
    if h < 2 || w < 2 {
        return Err(Error::shape(format!("band_masks: grid {h}x{w} too small")));
    }
    let edges: Vec<f64> = (0..=num_bands).map(|i| i as f64 * R_MAX / num_bands as f64).collect();
    let mut band_of = vec![0u16; h * w];
    let mut counts = vec![0usize; num_bands];
    for u in 0..h {
        for v in 0..w {
            let r = radius(u, v, h, w);
            let mut b = ((r / R_MAX) * num_bands as f64).floor() as usize;
            if b >= num_bands {
                b = num_bands - 1;
            }
            // Guard against landing one bin off from the float division.
            while b + 1 < num_bands && r >= edges[b + 1] {
                b += 1;
            }
            while b > 0 && r < edges[b] {
                b -= 1;
            }
            band_of[u * w + v] = b as u16;
            counts[b] += 1;
        }
    }
    Ok(BandSet { h, w, edges, band_of, counts })
}

impl BandSet {
    pub fn num_bands(&self) -> usize {
        self.counts.len()
    }

    pub fn grid(&self) -> (usize, usize) {
        (self.h, self.w)
    }

    pub fn edges(&self) -> &[f64] {
        &self.edges
    }

    /// Band index owning DFT bin (u, v).
    pub fn band_of(&self, u: usize, v: usize) -> usize {
        self.band_of[u * self.w + v] as usize
    }

    /// Number of DFT bins per band.
    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    /// Bands with no bins at all (possible when the band count exceeds
    /// the number of distinct radii); these report the similarity
    /// sentinel.
    pub fn empty_bands(&self) -> Vec<usize> {
        self.counts
            .iter()
            .enumerate()
            .filter_map(|(i, &c)| if c == 0 { Some(i) } else { None })
            .collect()
    }

    /// Binary mask of band `i`, row-major H x W.
    pub fn mask(&self, i: usize) -> Vec<bool> {
        self.band_of.iter().map(|&b| b as usize == i).collect()
    }
}

/// Keep only band `i` of the spectrum of `plane` and transform back.
pub fn band_filter(
    plane: &[f64],
    h: usize,
    w: usize,
    bands: &BandSet,
    i: usize,
) -> Result<Vec<f64>> {
    if (h, w) != bands.grid() {
        return Err(Error::shape(format!(
            "band_filter: plane {h}x{w} vs band set {:?}",
            bands.grid()
        )));
    }
    if i >= bands.num_bands() {
        return Err(Error::shape(format!("band_filter: band {i} out of {}", bands.num_bands())));
    }
    let mut spec = dft2(plane, h, w)?;
    for u in 0..h {
        for v in 0..w {
            if bands.band_of(u, v) != i {
                spec.coeffs[u * w + v] = Complex64::new(0.0, 0.0);
            }
        }
    }
    idft2(&spec)
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na < EMPTY_BAND_NORM || nb < EMPTY_BAND_NORM {
        return 0.0;
    }
    a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() / (na * nb)
}

/// Cosine similarity of the band-`i` components of two planes. Returns
/// the sentinel 0 when either filtered component is numerically empty.
pub fn band_similarity(
    a: &[f64],
    b: &[f64],
    h: usize,
    w: usize,
    bands: &BandSet,
    i: usize,
) -> Result<f64> {
    if a.len() != b.len() || a.len() != h * w {
        return Err(Error::shape(format!(
            "band_similarity: planes {} / {} vs {h}x{w}",
            a.len(),
            b.len()
        )));
    }
    let fa = band_filter(a, h, w, bands, i)?;
    let fb = band_filter(b, h, w, bands, i)?;
    Ok(cosine(&fa, &fb))
}

/// Which reference an output sequence is compared against.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TargetKind {
    /// The mapped noisy image (the regression target).
    Noisy,
    /// The clean source (available for synthetic noise).
    GroundTruth,
}

impl TargetKind {
    /// Short tag used in CSV output.
    pub fn tag(&self) -> &'static str {
        match self {
            TargetKind::Noisy => "nos",
            TargetKind::GroundTruth => "gt",
        }
    }
}

/// Per-iteration record of band similarities against one target.
#[derive(Debug, Clone)]
pub struct IpfsRecord {
    pub iteration: usize,
    pub target_kind: TargetKind,
    pub similarities: Vec<f64>,
}

/// Band similarities of one multi-channel image against a target of the
/// same shape: per-channel similarities averaged channel-wise.
pub fn image_band_similarities(img: &Image, target: &Image, bands: &BandSet) -> Result<Vec<f64>> {
    if !img.same_shape(target) {
        return Err(Error::shape(format!(
            "band similarities: image {}x{}x{} vs target {}x{}x{}",
            img.channels, img.height, img.width, target.channels, target.height, target.width
        )));
    }
    let (h, w) = (img.height, img.width);
    let mut sims = vec![0.0; bands.num_bands()];
    for c in 0..img.channels {
        for (i, s) in sims.iter_mut().enumerate() {
            *s += band_similarity(img.plane(c), target.plane(c), h, w, bands, i)?;
        }
    }
    for s in &mut sims {
        *s /= img.channels as f64;
    }
    Ok(sims)
}

/// Band-similarity records for a sequence of `(iteration, output)` pairs
/// against a fixed target.
pub fn ipfs_curve(
    outputs: &[(usize, Image)],
    target: &Image,
    target_kind: TargetKind,
    bands: &BandSet,
) -> Result<Vec<IpfsRecord>> {
    if outputs.is_empty() {
        return Err(Error::data("ipfs_curve: empty output sequence".to_string()));
    }
    outputs
        .iter()
        .map(|(t, img)| {
            Ok(IpfsRecord {
                iteration: *t,
                target_kind,
                similarities: image_band_similarities(img, target, bands)?,
            })
        })
        .collect()
}

/// Fraction of non-DC spectral energy at normalized radius >= `r_c`,
/// summed over channels. Constant images return 0.
pub fn hf_ratio(img: &Image, r_c: f64) -> Result<f64> {
    let (h, w) = (img.height, img.width);
    let mut num = 0.0;
    let mut den = 0.0;
    let mut dc = 0.0;
    for c in 0..img.channels {
        let spec = dft2(img.plane(c), h, w)?;
        dc += spec.at(0, 0).norm_sqr();
        for u in 0..h {
            for v in 0..w {
                if u == 0 && v == 0 {
                    continue;
                }
                let e = spec.at(u, v).norm_sqr();
                den += e;
                if radius(u, v, h, w) >= r_c {
                    num += e;
                }
            }
        }
    }
    // A constant image has zero AC energy up to transform round-off;
    // anything below this relative floor counts as constant.
    if den <= 1e-20 * (den + dc).max(1e-300) {
        Ok(0.0)
    } else {
        Ok(num / den)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dft2_of_constant_concentrates_at_dc() {
        let spec = dft2(&[0.5; 16], 4, 4).unwrap();
        assert!((spec.at(0, 0).re - 8.0).abs() < 1e-12);
        assert!(spec.at(0, 0).im.abs() < 1e-12);
        for u in 0..4 {
            for v in 0..4 {
                if (u, v) != (0, 0) {
                    assert!(spec.at(u, v).norm() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn dft2_of_delta_is_flat() {
        let mut img = vec![0.0; 12];
        img[0] = 1.0;
        let spec = dft2(&img, 3, 4).unwrap();
        for c in spec.coeffs() {
            assert!((c.re - 1.0).abs() < 1e-12 && c.im.abs() < 1e-12);
        }
    }

    #[test]
    fn hermitian_symmetry_for_real_input() {
        let img: Vec<f64> = (0..48).map(|i| ((i * 37 % 19) as f64) / 19.0 - 0.5).collect();
        let spec = dft2(&img, 6, 8).unwrap();
        for u in 0..6 {
            for v in 0..8 {
                let a = spec.at(u, v);
                let b = spec.at((6 - u) % 6, (8 - v) % 8).conj();
                assert!((a - b).norm() < 1e-10);
            }
        }
    }

    #[test]
    fn band_zero_holds_dc_and_partition_covers_grid() {
        let bands = band_masks(8, 8, 4).unwrap();
        assert_eq!(bands.band_of(0, 0), 0);
        let total: usize = bands.counts().iter().sum();
        assert_eq!(total, 64);
        // Masks are disjoint and cover: each bin belongs to exactly one.
        let mut covered = vec![0usize; 64];
        for i in 0..4 {
            for (j, m) in bands.mask(i).iter().enumerate() {
                if *m {
                    covered[j] += 1;
                }
            }
        }
        assert!(covered.iter().all(|&c| c == 1));
    }

    #[test]
    fn band_index_is_monotone_in_radius() {
        let bands = band_masks(9, 7, 5).unwrap();
        let mut pairs: Vec<(f64, usize)> = Vec::new();
        for u in 0..9 {
            for v in 0..7 {
                pairs.push((radius(u, v, 9, 7), bands.band_of(u, v)));
            }
        }
        pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        for win in pairs.windows(2) {
            assert!(win[0].1 <= win[1].1);
        }
    }

    #[test]
    fn many_bands_flag_empty_ones() {
        let bands = band_masks(4, 4, 12).unwrap();
        assert!(!bands.empty_bands().is_empty());
    }

    #[test]
    fn single_band_filter_is_identity() {
        let img: Vec<f64> = (0..20).map(|i| (i as f64 * 0.37).sin()).collect();
        let bands = band_masks(4, 5, 1).unwrap();
        let out = band_filter(&img, 4, 5, &bands, 0).unwrap();
        for (a, b) in img.iter().zip(&out) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn constant_has_no_energy_outside_band_zero() {
        let bands = band_masks(6, 6, 3).unwrap();
        for i in 1..3 {
            let out = band_filter(&[0.7; 36], 6, 6, &bands, i).unwrap();
            assert!(out.iter().all(|v| v.abs() < 1e-12));
        }
    }

    #[test]
    fn similarity_of_identical_and_negated_images() {
        let img: Vec<f64> = (0..64).map(|i| ((i * 29 % 13) as f64) / 13.0).collect();
        let neg: Vec<f64> = img.iter().map(|v| -v).collect();
        let bands = band_masks(8, 8, 4).unwrap();
        for i in 0..4 {
            let s = band_similarity(&img, &img, 8, 8, &bands, i).unwrap();
            assert!((s - 1.0).abs() < 1e-9);
            let n = band_similarity(&img, &neg, 8, 8, &bands, i).unwrap();
            assert!((n + 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn similarity_is_scale_invariant() {
        let a: Vec<f64> = (0..64).map(|i| ((i * 7 % 23) as f64) / 23.0 - 0.4).collect();
        let b: Vec<f64> = (0..64).map(|i| ((i * 11 % 17) as f64) / 17.0 - 0.3).collect();
        let bands = band_masks(8, 8, 3).unwrap();
        for i in 0..3 {
            let s = band_similarity(&a, &b, 8, 8, &bands, i).unwrap();
            let a2: Vec<f64> = a.iter().map(|v| 2.5 * v).collect();
            let b2: Vec<f64> = b.iter().map(|v| -0.7 * v).collect();
            let s2 = band_similarity(&a2, &b2, 8, 8, &bands, i).unwrap();
            assert!((s2 + s).abs() < 1e-9, "sign flips with alpha*beta < 0");
        }
    }

    #[test]
    fn ipfs_curve_on_target_itself() {
        let img =
            Image::from_plane(8, 8, (0..64).map(|i| (i as f64 * 0.11).cos()).collect()).unwrap();
        let bands = band_masks(8, 8, 4).unwrap();
        let recs = ipfs_curve(&[(0, img.clone())], &img, TargetKind::GroundTruth, &bands).unwrap();
        assert_eq!(recs.len(), 1);
        for (i, s) in recs[0].similarities.iter().enumerate() {
            if bands.counts()[i] > 0 {
                assert!((s - 1.0).abs() < 1e-9);
            }
        }
        let neg = Image::from_plane(8, 8, img.plane(0).iter().map(|v| -v).collect()).unwrap();
        let recs = ipfs_curve(&[(0, neg)], &img, TargetKind::Noisy, &bands).unwrap();
        for s in &recs[0].similarities {
            assert!((s + 1.0).abs() < 1e-9);
        }
        assert!(ipfs_curve(&[], &img, TargetKind::Noisy, &bands).is_err());
    }

    #[test]
    fn hf_ratio_extremes() {
        let flat = Image::from_plane(6, 6, vec![0.4; 36]).unwrap();
        assert_eq!(hf_ratio(&flat, 0.25).unwrap(), 0.0);
        // Nyquist checkerboard: all AC energy at the corner bin.
        let mut checker = Image::zeros(1, 8, 8);
        for i in 0..8 {
            for j in 0..8 {
                checker.set_pixel(0, i, j, if (i + j) % 2 == 0 { 1.0 } else { 0.0 });
            }
        }
        assert!((hf_ratio(&checker, 0.25).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn hf_ratio_ignores_dc_offset() {
        let img: Vec<f64> = (0..64).map(|i| ((i * 13 % 31) as f64) / 31.0).collect();
        let shifted: Vec<f64> = img.iter().map(|v| v + 0.35).collect();
        let a = hf_ratio(&Image::from_plane(8, 8, img).unwrap(), 0.25).unwrap();
        let b = hf_ratio(&Image::from_plane(8, 8, shifted).unwrap(), 0.25).unwrap();
        assert!((a - b).abs() < 1e-10);
    }
}
