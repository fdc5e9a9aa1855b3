//! Spectral-norm estimation and clamping for convolution kernels.
//!
//! A convolution layer's Lipschitz constant is bounded by the spectral
//! norm of its reshaped O x (C*Kh*Kw) weight matrix. That norm is tracked
//! with warm-started power iteration (one step per training step) and the
//! kernel is projected back to the beta-ball after each optimizer update:
//! `W <- W / max(1, sigma/beta)`. The reshaped-matrix norm is the standard
//! proxy, not the exact convolution operator norm; `per_frequency_gain`
//! exposes the per-frequency operator gain so the gap stays observable.

use num_complex::Complex64;
use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::{domain, stream};
use crate::tensor::Tensor;

/// Per-layer power-iteration state and clamp threshold.
#[derive(Debug, Clone)]
pub struct SpectralNormState {
    pub layer_id: String,
    /// Left vector, length O. Unit norm after any update.
    pub u: Vec<f64>,
    /// Right vector, length C*Kh*Kw. Unit norm after any update.
    pub v: Vec<f64>,
    /// Clamp threshold.
    pub beta: f64,
    /// Most recent spectral-norm estimate.
    pub last_estimate: f64,
}

impl SpectralNormState {
    /// Fresh state with a deterministic random unit `u`.
    pub fn new(layer_id: impl Into<String>, rows: usize, cols: usize, beta: f64, seed: u64) -> Self {
        let layer_id = layer_id.into();
        let mut rng = stream(seed, domain::POWER, hash_label(&layer_id));
        let mut u: Vec<f64> = (0..rows).map(|_| rng.gen_range(-1.0..1.0)).collect();
        normalize(&mut u);
        SpectralNormState { layer_id, u, v: vec![0.0; cols], beta, last_estimate: 0.0 }
    }
}

fn hash_label(s: &str) -> u64 {
    // FNV-1a, for a stable per-layer stream index.
    let mut h: u64 = 0xcbf29ce484222325;
    for b in s.as_bytes() {
        h ^= *b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

fn normalize(v: &mut [f64]) -> f64 {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        for x in v.iter_mut() {
            *x /= n;
        }
    }
    n
}

/// View a kernel O x C x Kh x Kw as its row-major O x (C*Kh*Kw) matrix.
/// The flattening is the identity on storage, so it is trivially
/// bijective with the kernel.
pub fn reshape_kernel(kernel: &Tensor) -> Result<(Vec<f64>, usize, usize)> {
    let s = kernel.shape();
    if s.len() != 4 {
        return Err(Error::shape(format!("reshape_kernel expects O x C x Kh x Kw, got {s:?}")));
    }
    Ok((kernel.data().to_vec(), s[0], s[1] * s[2] * s[3]))
}

/// Rebuild a kernel tensor from its reshaped matrix.
pub fn kernel_from_matrix(mat: &[f64], shape: &[usize]) -> Result<Tensor> {
    Tensor::from_vec(shape, mat.to_vec())
}

/// Alternating power iteration on `w_mat` (rows x cols): `v <- W^T u`,
/// `u <- W v`, both normalized, repeated `iters` times. Returns the
/// estimate `u^T W v`, which is monotone non-decreasing in `iters` up to
/// round-off. A zero matrix reports 0 and leaves the vectors untouched.
pub fn power_iterate(
    state: &mut SpectralNormState,
    w_mat: &[f64],
    rows: usize,
    cols: usize,
    iters: usize,
) -> Result<f64> {
    if w_mat.len() != rows * cols {
        return Err(Error::shape(format!(
            "power_iterate: matrix length {} vs {rows}x{cols}",
            w_mat.len()
        )));
    }
    if state.u.len() != rows || state.v.len() != cols {
        return Err(Error::shape(format!(
            "power_iterate({}): state sized {}x{} vs matrix {rows}x{cols}",
            state.layer_id,
            state.u.len(),
            state.v.len()
        )));
    }
    if iters == 0 {
        return Err(Error::config("power_iterate: iters must be >= 1".to_string()));
    }
    if w_mat.iter().all(|x| *x == 0.0) {
        state.last_estimate = 0.0;
        return Ok(0.0);
    }
    for round in 0..iters {
        // v <- normalize(W^T u)
        let mut v = vec![0.0; cols];
        for i in 0..rows {
            let ui = state.u[i];
            for j in 0..cols {
                v[j] += w_mat[i * cols + j] * ui;
            }
        }
        if normalize(&mut v) == 0.0 {
            // u fell into the null space of W^T: restart deterministically.
            let mut rng = stream(hash_label(&state.layer_id), domain::POWER, round as u64 + 1);
            for x in state.u.iter_mut() {
                *x = rng.gen_range(-1.0..1.0);
            }
            normalize(&mut state.u);
            continue;
        }
        // u <- normalize(W v)
        let mut u = vec![0.0; rows];
        for i in 0..rows {
            let mut s = 0.0;
            for j in 0..cols {
                s += w_mat[i * cols + j] * v[j];
            }
            u[i] = s;
        }
        normalize(&mut u);
        state.u = u;
        state.v = v;
    }
    let mut sigma = 0.0;
    for i in 0..rows {
        let mut s = 0.0;
        for j in 0..cols {
            s += w_mat[i * cols + j] * state.v[j];
        }
        sigma += state.u[i] * s;
    }
    state.last_estimate = sigma.max(0.0);
    Ok(state.last_estimate)
}

/// Spectral-norm estimate from a fresh random start, for verification:
/// 50 iterations by default via `iters`.
pub fn verify_norm(w_mat: &[f64], rows: usize, cols: usize, iters: usize, seed: u64) -> f64 {
    let mut st = SpectralNormState::new("verify", rows, cols, 1.0, seed);
    power_iterate(&mut st, w_mat, rows, cols, iters).unwrap_or(0.0)
}

/// Project the kernel back under the threshold: if the current estimate
/// exceeds `beta`, scale by `beta / sigma` (i.e. `W / max(1, sigma/beta)`).
/// Returns true when a rescale happened. Runs outside the gradient tape.
pub fn clamp_weights(kernel: &mut Tensor, state: &mut SpectralNormState, beta: f64) -> Result<bool> {
    if beta <= 0.0 {
        return Err(Error::config(format!("clamp threshold must be positive, got {beta}")));
    }
    let sigma = state.last_estimate;
    if sigma <= beta {
        return Ok(false);
    }
    let scale = beta / sigma;
    for w in kernel.data_mut() {
        *w *= scale;
    }
    // Scaling the matrix scales its spectral norm exactly.
    state.last_estimate = beta;
    Ok(true)
}

/// Per-frequency gain of the layer on an H x W grid: the largest singular
/// value of the C_out x C_in complex transfer matrix at each DFT bin,
/// computed by brute-force complex power iteration (channel counts are
/// small). Row-major H x W output.
pub fn per_frequency_gain(kernel: &Tensor, h: usize, w: usize) -> Result<Vec<f64>> {
    let s = kernel.shape();
    if s.len() != 4 {
        return Err(Error::shape(format!("per_frequency_gain expects a kernel, got {s:?}")));
    }
    let (o, c, kh, kw) = (s[0], s[1], s[2], s[3]);
    if h == 0 || w == 0 {
        return Err(Error::shape("per_frequency_gain: empty grid".to_string()));
    }
    let kd = kernel.data();
    let mut gains = vec![0.0; h * w];
    let mut m = vec![Complex64::new(0.0, 0.0); o * c];
    for u in 0..h {
        for v in 0..w {
            for oc in 0..o {
                for ic in 0..c {
                    let mut acc = Complex64::new(0.0, 0.0);
                    for p in 0..kh {
                        for q in 0..kw {
                            let ang = -2.0
                                * std::f64::consts::PI
                                * (u as f64 * p as f64 / h as f64 + v as f64 * q as f64 / w as f64);
                            acc += kd[((oc * c + ic) * kh + p) * kw + q]
                                * Complex64::new(ang.cos(), ang.sin());
                        }
                    }
                    m[oc * c + ic] = acc;
                }
            }
            gains[u * w + v] = complex_sigma_max(&m, o, c);
        }
    }
    Ok(gains)
}

/// Largest singular value of a small complex matrix by alternating power
/// iteration with a deterministic start.
fn complex_sigma_max(m: &[Complex64], rows: usize, cols: usize) -> f64 {
    if m.iter().all(|z| z.norm_sqr() == 0.0) {
        return 0.0;
    }
    let mut u: Vec<Complex64> =
        (0..rows).map(|i| Complex64::new(1.0 + i as f64 * 0.37, 0.5 - i as f64 * 0.11)).collect();
    cnormalize(&mut u);
    let mut sigma = 0.0f64;
    for _ in 0..4096 {
        // v <- normalize(M^H u)
        let mut v = vec![Complex64::new(0.0, 0.0); cols];
        for i in 0..rows {
            for (j, vj) in v.iter_mut().enumerate() {
                *vj += m[i * cols + j].conj() * u[i];
            }
        }
        if cnormalize(&mut v) == 0.0 {
            // Restart from a different deterministic direction.
            for (i, ui) in u.iter_mut().enumerate() {
                *ui = Complex64::new(0.3 - i as f64 * 0.71, 1.0 + i as f64 * 0.19);
            }
            cnormalize(&mut u);
            continue;
        }
        // u <- normalize(M v)
        let mut nu = vec![Complex64::new(0.0, 0.0); rows];
        for (i, nui) in nu.iter_mut().enumerate() {
            for (j, vj) in v.iter().enumerate() {
                *nui += m[i * cols + j] * vj;
            }
        }
        let next = cnormalize(&mut nu);
        u = nu;
        if (next - sigma).abs() <= 1e-15 * next.max(1.0) {
            sigma = next;
            break;
        }
        sigma = next;
    }
    sigma
}

fn cnormalize(v: &mut [Complex64]) -> f64 {
    let n = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    if n > 0.0 {
        for z in v.iter_mut() {
            *z /= n;
        }
    }
    n
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reshape_kernel_layout_and_roundtrip() {
        let k = Tensor::from_vec(&[1, 1, 1, 1], vec![2.5]).unwrap();
        let (m, r, c) = reshape_kernel(&k).unwrap();
        assert_eq!((r, c), (1, 1));
        assert_eq!(m, vec![2.5]);

        // O=2, C=1, K=2x2: rows are per-output-channel, flattened row-major.
        let k = Tensor::from_vec(&[2, 1, 2, 2], (1..=8).map(f64::from).collect()).unwrap();
        let (m, r, c) = reshape_kernel(&k).unwrap();
        assert_eq!((r, c), (2, 4));
        assert_eq!(m, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0]);
        let back = kernel_from_matrix(&m, &[2, 1, 2, 2]).unwrap();
        assert_eq!(back.data(), k.data());
    }

    #[test]
    fn power_iteration_finds_diagonal_singular_value() {
        let w = vec![3.0, 0.0, 0.0, 1.0];
        let mut st = SpectralNormState::new("diag", 2, 2, 1.0, 0);
        let sigma = power_iterate(&mut st, &w, 2, 2, 50).unwrap();
        assert!((sigma - 3.0).abs() < 1e-8, "sigma {sigma}");
        let un: f64 = st.u.iter().map(|x| x * x).sum::<f64>().sqrt();
        let vn: f64 = st.v.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!((un - 1.0).abs() < 1e-12 && (vn - 1.0).abs() < 1e-12);
    }

    #[test]
    fn zero_matrix_reports_zero_and_keeps_vectors() {
        let w = vec![0.0; 6];
        let mut st = SpectralNormState::new("zero", 2, 3, 1.0, 0);
        let u_before = st.u.clone();
        let sigma = power_iterate(&mut st, &w, 2, 3, 5).unwrap();
        assert_eq!(sigma, 0.0);
        assert_eq!(st.u, u_before);
    }

    #[test]
    fn estimates_are_monotone_in_iterations() {
        let mut rng = stream(5, 42, 0);
        let w: Vec<f64> = (0..8 * 18).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut st = SpectralNormState::new("mono", 8, 18, 1.0, 1);
        let mut prev = 0.0;
        for _ in 0..30 {
            let sigma = power_iterate(&mut st, &w, 8, 18, 1).unwrap();
            assert!(sigma >= prev - 1e-12, "estimate decreased: {prev} -> {sigma}");
            prev = sigma;
        }
    }

    #[test]
    fn clamp_leaves_small_kernels_alone() {
        let mut k = Tensor::from_vec(&[1, 1, 1, 1], vec![0.5]).unwrap();
        let mut st = SpectralNormState::new("small", 1, 1, 1.0, 0);
        power_iterate(&mut st, &[0.5], 1, 1, 10).unwrap();
        let hit = clamp_weights(&mut k, &mut st, 1.0).unwrap();
        assert!(!hit);
        assert_eq!(k.data(), &[0.5]);
    }

    #[test]
    fn clamp_scales_single_element_kernel() {
        let mut k = Tensor::from_vec(&[1, 1, 1, 1], vec![2.0]).unwrap();
        let mut st = SpectralNormState::new("one", 1, 1, 1.0, 0);
        power_iterate(&mut st, &[2.0], 1, 1, 10).unwrap();
        let hit = clamp_weights(&mut k, &mut st, 1.0).unwrap();
        assert!(hit);
        assert!((k.data()[0] - 1.0).abs() < 1e-12);
        assert!(clamp_weights(&mut k, &mut st, 0.0).is_err());
    }

    #[test]
    fn flat_gain_for_1x1_kernel_and_lowpass_for_averaging() {
        let k = Tensor::from_vec(&[1, 1, 1, 1], vec![-1.5]).unwrap();
        let g = per_frequency_gain(&k, 8, 8).unwrap();
        assert!(g.iter().all(|v| (v - 1.5).abs() < 1e-12));

        let avg = Tensor::from_vec(&[1, 1, 3, 3], vec![1.0 / 9.0; 9]).unwrap();
        let g = per_frequency_gain(&avg, 16, 16).unwrap();
        assert!((g[0] - 1.0).abs() < 1e-12, "DC gain of the averaging kernel is 1");
        for (i, v) in g.iter().enumerate() {
            if i != 0 {
                assert!(*v < 1.0, "averaging kernel must attenuate AC bin {i}");
            }
        }
    }
}
