//! Brute-force reference implementations used as oracles by the test
//! suites. Everything here is written as a literal transcription of the
//! defining formula — direct sums, explicit matrices, nested loops — and
//! deliberately shares no code with the main library, so agreement between
//! the two is meaningful.

/// Direct-sum 2-D DFT, O((HW)^2). Returns (re, im) row-major H x W.
pub fn dft2_direct(img: &[f64], h: usize, w: usize) -> (Vec<f64>, Vec<f64>) {
    assert_eq!(img.len(), h * w);
    let mut re = vec![0.0; h * w];
    let mut im = vec![0.0; h * w];
    for u in 0..h {
        for v in 0..w {
            let mut sr = 0.0;
            let mut si = 0.0;
            for i in 0..h {
                for j in 0..w {
                    let ang = -2.0 * std::f64::consts::PI
                        * (u as f64 * i as f64 / h as f64 + v as f64 * j as f64 / w as f64);
                    sr += img[i * w + j] * ang.cos();
                    si += img[i * w + j] * ang.sin();
                }
            }
            re[u * w + v] = sr;
            im[u * w + v] = si;
        }
    }
    (re, im)
}

/// Inverse of [`dft2_direct`] (normalized by 1/(HW)), real part only.
pub fn idft2_direct(re: &[f64], im: &[f64], h: usize, w: usize) -> Vec<f64> {
    let mut out = vec![0.0; h * w];
    for i in 0..h {
        for j in 0..w {
            let mut s = 0.0;
            for u in 0..h {
                for v in 0..w {
                    let ang = 2.0 * std::f64::consts::PI
                        * (u as f64 * i as f64 / h as f64 + v as f64 * j as f64 / w as f64);
                    s += re[u * w + v] * ang.cos() - im[u * w + v] * ang.sin();
                }
            }
            out[i * w + j] = s / (h * w) as f64;
        }
    }
    out
}

/// Centered normalized radius of DFT bin (u, v) for an H x W grid.
pub fn bin_radius(u: usize, v: usize, h: usize, w: usize) -> f64 {
    let uc = if u < h.div_ceil(2) { u as f64 } else { u as f64 - h as f64 };
    let vc = if v < w.div_ceil(2) { v as f64 } else { v as f64 - w as f64 };
    let fu = uc / h as f64;
    let fv = vc / w as f64;
    (fu * fu + fv * fv).sqrt()
}

/// Band-filter `img` through the direct DFT: keep bins with
/// `lo <= r < hi` (`hi_inclusive` closes the upper edge), invert.
pub fn band_filter_direct(
    img: &[f64],
    h: usize,
    w: usize,
    lo: f64,
    hi: f64,
    hi_inclusive: bool,
) -> Vec<f64> {
    let (mut re, mut im) = dft2_direct(img, h, w);
    for u in 0..h {
        for v in 0..w {
            let r = bin_radius(u, v, h, w);
            let keep = r >= lo && (r < hi || (hi_inclusive && r <= hi));
            if !keep {
                re[u * w + v] = 0.0;
                im[u * w + v] = 0.0;
            }
        }
    }
    idft2_direct(&re, &im, h, w)
}

/// Cosine similarity of two equal-length vectors; 0.0 if either norm
/// falls below `floor`.
pub fn cosine(a: &[f64], b: &[f64], floor: f64) -> f64 {
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na < floor || nb < floor {
        return 0.0;
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    dot / (na * nb)
}

/// High-frequency energy fraction via the direct DFT: energy at
/// radius >= r_c over all non-DC energy.
pub fn hf_ratio_direct(img: &[f64], h: usize, w: usize, r_c: f64) -> f64 {
    let (re, im) = dft2_direct(img, h, w);
    let mut num = 0.0;
    let mut den = 0.0;
    for u in 0..h {
        for v in 0..w {
            if u == 0 && v == 0 {
                continue;
            }
            let e = re[u * w + v] * re[u * w + v] + im[u * w + v] * im[u * w + v];
            den += e;
            if bin_radius(u, v, h, w) >= r_c {
                num += e;
            }
        }
    }
    if den <= 0.0 {
        0.0
    } else {
        num / den
    }
}

/// All eigenvalues of a symmetric matrix by the cyclic Jacobi rotation
/// method. `a` is row-major n x n and must be symmetric.
pub fn jacobi_eigenvalues(a: &[f64], n: usize) -> Vec<f64> {
    assert_eq!(a.len(), n * n);
    let mut m = a.to_vec();
    for _ in 0..200 {
        let mut off = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    off += m[i * n + j] * m[i * n + j];
                }
            }
        }
        if off < 1e-28 {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[p * n + q];
                if apq.abs() < 1e-300 {
                    continue;
                }
                let app = m[p * n + p];
                let aqq = m[q * n + q];
                // Rotation angle that zeroes the (p, q) entry.
                let phi = 0.5 * (2.0 * apq).atan2(app - aqq);
                let c = phi.cos();
                let s = phi.sin();
                for k in 0..n {
                    let mkp = m[k * n + p];
                    let mkq = m[k * n + q];
                    m[k * n + p] = c * mkp + s * mkq;
                    m[k * n + q] = -s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[p * n + k];
                    let mqk = m[q * n + k];
                    m[p * n + k] = c * mpk + s * mqk;
                    m[q * n + k] = -s * mpk + c * mqk;
                }
            }
        }
    }
    (0..n).map(|i| m[i * n + i]).collect()
}

/// Largest singular value of a row-major `rows x cols` matrix, via
/// Jacobi eigenvalues of the Gram matrix.
pub fn largest_singular_value(mat: &[f64], rows: usize, cols: usize) -> f64 {
    assert_eq!(mat.len(), rows * cols);
    // Gram on the smaller side keeps the eigenproblem tiny.
    let (g, n) = if rows <= cols {
        // M M^T
        let mut g = vec![0.0; rows * rows];
        for i in 0..rows {
            for j in 0..rows {
                let mut s = 0.0;
                for k in 0..cols {
                    s += mat[i * cols + k] * mat[j * cols + k];
                }
                g[i * rows + j] = s;
            }
        }
        (g, rows)
    } else {
        // M^T M
        let mut g = vec![0.0; cols * cols];
        for i in 0..cols {
            for j in 0..cols {
                let mut s = 0.0;
                for k in 0..rows {
                    s += mat[k * cols + i] * mat[k * cols + j];
                }
                g[i * cols + j] = s;
            }
        }
        (g, cols)
    };
    let eig = jacobi_eigenvalues(&g, n);
    eig.into_iter().fold(0.0f64, f64::max).max(0.0).sqrt()
}

/// Gauss-Jordan inverse with partial pivoting; row-major n x n.
pub fn gauss_jordan_inverse(a: &[f64], n: usize) -> Option<Vec<f64>> {
    assert_eq!(a.len(), n * n);
    let mut aug = vec![0.0; n * 2 * n];
    for i in 0..n {
        for j in 0..n {
            aug[i * 2 * n + j] = a[i * n + j];
        }
        aug[i * 2 * n + n + i] = 1.0;
    }
    for col in 0..n {
        let mut piv = col;
        for r in (col + 1)..n {
            if aug[r * 2 * n + col].abs() > aug[piv * 2 * n + col].abs() {
                piv = r;
            }
        }
        if aug[piv * 2 * n + col].abs() < 1e-300 {
            return None;
        }
        if piv != col {
            for k in 0..2 * n {
                aug.swap(col * 2 * n + k, piv * 2 * n + k);
            }
        }
        let d = aug[col * 2 * n + col];
        for k in 0..2 * n {
            aug[col * 2 * n + k] /= d;
        }
        for r in 0..n {
            if r == col {
                continue;
            }
            let f = aug[r * 2 * n + col];
            if f != 0.0 {
                for k in 0..2 * n {
                    aug[r * 2 * n + k] -= f * aug[col * 2 * n + k];
                }
            }
        }
    }
    let mut inv = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            inv[i * n + j] = aug[i * 2 * n + n + j];
        }
    }
    Some(inv)
}

/// Explicit projection `y = V (V^T V + eps I)^{-1} V^T x` with the
/// N x N projector materialized through the Gauss-Jordan inverse.
pub fn project_explicit(v: &[f64], n: usize, k: usize, x: &[f64], eps: f64) -> Vec<f64> {
    assert_eq!(v.len(), n * k);
    assert_eq!(x.len(), n);
    let mut gram = vec![0.0; k * k];
    for a in 0..k {
        for b in 0..k {
            let mut s = 0.0;
            for r in 0..n {
                s += v[r * k + a] * v[r * k + b];
            }
            gram[a * k + b] = s + if a == b { eps } else { 0.0 };
        }
    }
    let ginv = gauss_jordan_inverse(&gram, k).expect("singular regularized Gram");
    // P = V Ginv V^T, applied to x by explicit materialization.
    let mut p = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            let mut s = 0.0;
            for a in 0..k {
                for b in 0..k {
                    s += v[i * k + a] * ginv[a * k + b] * v[j * k + b];
                }
            }
            p[i * n + j] = s;
        }
    }
    let mut y = vec![0.0; n];
    for i in 0..n {
        let mut s = 0.0;
        for j in 0..n {
            s += p[i * n + j] * x[j];
        }
        y[i] = s;
    }
    y
}

/// Six-loop cross-correlation with symmetric zero padding and bias.
/// x: B x C x H x W, w: O x C x Kh x Kw, b: O. Output B x O x H' x W'.
#[allow(clippy::too_many_arguments)]
pub fn conv2d_naive(
    x: &[f64],
    bsz: usize,
    c: usize,
    h: usize,
    w: usize,
    wt: &[f64],
    o: usize,
    kh: usize,
    kw: usize,
    bias: &[f64],
    pad: usize,
) -> Vec<f64> {
    let ho = h + 2 * pad + 1 - kh;
    let wo = w + 2 * pad + 1 - kw;
    let mut out = vec![0.0; bsz * o * ho * wo];
    for b in 0..bsz {
        for oc in 0..o {
            for i in 0..ho {
                for j in 0..wo {
                    let mut acc = bias[oc];
                    for ic in 0..c {
                        for p in 0..kh {
                            for q in 0..kw {
                                let ii = i as isize + p as isize - pad as isize;
                                let jj = j as isize + q as isize - pad as isize;
                                if ii >= 0 && (ii as usize) < h && jj >= 0 && (jj as usize) < w {
                                    acc += x[((b * c + ic) * h + ii as usize) * w + jj as usize]
                                        * wt[((oc * c + ic) * kh + p) * kw + q];
                                }
                            }
                        }
                    }
                    out[((b * o + oc) * ho + i) * wo + j] = acc;
                }
            }
        }
    }
    out
}

/// Cell-mean 2x2 pooling oracle on one plane.
pub fn avgpool2_plane(x: &[f64], h: usize, w: usize) -> Vec<f64> {
    assert!(h % 2 == 0 && w % 2 == 0);
    let mut out = vec![0.0; (h / 2) * (w / 2)];
    for i in 0..h / 2 {
        for j in 0..w / 2 {
            out[i * (w / 2) + j] = (x[(2 * i) * w + 2 * j]
                + x[(2 * i) * w + 2 * j + 1]
                + x[(2 * i + 1) * w + 2 * j]
                + x[(2 * i + 1) * w + 2 * j + 1])
                / 4.0;
        }
    }
    out
}

/// Closed-form bilinear x2 upsampling weights (half-pixel centers,
/// clamped edges) evaluated per output pixel on one plane.
pub fn bilinear_up2_plane(x: &[f64], h: usize, w: usize) -> Vec<f64> {
    let axis = |len: usize, i2: usize| -> (usize, usize, f64) {
        let src = (i2 as f64 + 0.5) / 2.0 - 0.5;
        let i0f = src.floor();
        let t = src - i0f;
        let clamp = |v: f64| -> usize {
            if v < 0.0 {
                0
            } else if v > (len - 1) as f64 {
                len - 1
            } else {
                v as usize
            }
        };
        (clamp(i0f), clamp(i0f + 1.0), t)
    };
    let (h2, w2) = (2 * h, 2 * w);
    let mut out = vec![0.0; h2 * w2];
    for i2 in 0..h2 {
        let (r0, r1, tr) = axis(h, i2);
        for j2 in 0..w2 {
            let (c0, c1, tc) = axis(w, j2);
            out[i2 * w2 + j2] = (1.0 - tr) * (1.0 - tc) * x[r0 * w + c0]
                + (1.0 - tr) * tc * x[r0 * w + c1]
                + tr * (1.0 - tc) * x[r1 * w + c0]
                + tr * tc * x[r1 * w + c1];
        }
    }
    out
}

/// Central-difference gradient of a scalar function at `x`.
pub fn finite_diff_grad(f: &mut dyn FnMut(&[f64]) -> f64, x: &[f64], step: f64) -> Vec<f64> {
    let mut g = vec![0.0; x.len()];
    let mut xp = x.to_vec();
    for i in 0..x.len() {
        let orig = xp[i];
        xp[i] = orig + step;
        let fp = f(&xp);
        xp[i] = orig - step;
        let fm = f(&xp);
        xp[i] = orig;
        g[i] = (fp - fm) / (2.0 * step);
    }
    g
}

/// Max-norm relative disagreement between an analytic gradient and a
/// finite-difference one, normalized by the overall gradient scale.
pub fn grad_rel_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    let scale = numeric
        .iter()
        .chain(analytic.iter())
        .fold(0.0f64, |m, v| m.max(v.abs()))
        .max(1e-8);
    analytic
        .iter()
        .zip(numeric)
        .fold(0.0f64, |m, (a, n)| m.max((a - n).abs()))
        / scale
}

/// PSNR by the bare formula, mse computed in one pass.
pub fn psnr_direct(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let mse: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64;
    if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (1.0 / mse).log10()
    }
}

/// Single-scale SSIM on one plane by the literal windowed formula:
/// 11x11 Gaussian window (sigma 1.5) over valid positions, K1=0.01,
/// K2=0.03, dynamic range 1.0. No separability tricks.
pub fn ssim_plane_direct(a: &[f64], b: &[f64], h: usize, w: usize) -> f64 {
    assert!(h >= 11 && w >= 11, "plane too small for an 11x11 window");
    let mut win = [[0.0f64; 11]; 11];
    let mut sum = 0.0;
    for (i, row) in win.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            let di = i as f64 - 5.0;
            let dj = j as f64 - 5.0;
            *v = (-(di * di + dj * dj) / (2.0 * 1.5 * 1.5)).exp();
            sum += *v;
        }
    }
    for row in win.iter_mut() {
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    let c1 = (0.01f64).powi(2);
    let c2 = (0.03f64).powi(2);
    let mut total = 0.0;
    let mut count = 0usize;
    for i in 0..=(h - 11) {
        for j in 0..=(w - 11) {
            let mut mx = 0.0;
            let mut my = 0.0;
            let mut sxx = 0.0;
            let mut syy = 0.0;
            let mut sxy = 0.0;
            for (p, row) in win.iter().enumerate() {
                for (q, &wv) in row.iter().enumerate() {
                    let xv = a[(i + p) * w + j + q];
                    let yv = b[(i + p) * w + j + q];
                    mx += wv * xv;
                    my += wv * yv;
                    sxx += wv * xv * xv;
                    syy += wv * yv * yv;
                    sxy += wv * xv * yv;
                }
            }
            let vx = sxx - mx * mx;
            let vy = syy - my * my;
            let cxy = sxy - mx * my;
            total += ((2.0 * mx * my + c1) * (2.0 * cxy + c2))
                / ((mx * mx + my * my + c1) * (vx + vy + c2));
            count += 1;
        }
    }
    total / count as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dft_roundtrip_on_small_input() {
        let img = [0.3, -1.2, 2.0, 0.7, 0.0, 1.5];
        let (re, im) = dft2_direct(&img, 2, 3);
        let back = idft2_direct(&re, &im, 2, 3);
        for (a, b) in img.iter().zip(&back) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn jacobi_matches_known_eigenvalues() {
        // diag(3, 1) rotated by 30 degrees.
        let (c, s) = (0.5f64.sqrt(), 0.5f64.sqrt());
        let a = [
            c * c * 3.0 + s * s * 1.0,
            c * s * (3.0 - 1.0),
            c * s * (3.0 - 1.0),
            s * s * 3.0 + c * c * 1.0,
        ];
        let mut eig = jacobi_eigenvalues(&a, 2);
        eig.sort_by(|x, y| x.partial_cmp(y).unwrap());
        assert!((eig[0] - 1.0).abs() < 1e-12);
        assert!((eig[1] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn gauss_jordan_inverts_identity_product() {
        let a = [4.0, 1.0, 0.5, 1.0, 3.0, 0.2, 0.5, 0.2, 2.0];
        let inv = gauss_jordan_inverse(&a, 3).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let mut s = 0.0;
                for k in 0..3 {
                    s += a[i * 3 + k] * inv[k * 3 + j];
                }
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((s - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn singular_value_of_diagonal() {
        let m = [3.0, 0.0, 0.0, 1.0];
        assert!((largest_singular_value(&m, 2, 2) - 3.0).abs() < 1e-12);
    }
}
