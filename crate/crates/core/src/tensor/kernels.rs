//! Raw numeric kernels shared by the tape's forward and backward passes.
//! All functions work on flat row-major slices with explicit dimensions.

/// Cross-correlation with symmetric zero padding plus per-channel bias.
/// x: B x C x H x W, wt: O x C x Kh x Kw, bias: O. Output B x O x Ho x Wo
/// with Ho = H + 2*pad + 1 - Kh (same spatial size when pad = (K-1)/2).
#[allow(clippy::too_many_arguments)]
pub fn conv2d_forward(
    x: &[f64],
    (b, c, h, w): (usize, usize, usize, usize),
    wt: &[f64],
    (o, kh, kw): (usize, usize, usize),
    bias: &[f64],
    pad: usize,
) -> Vec<f64> {
    let ho = h + 2 * pad + 1 - kh;
    let wo = w + 2 * pad + 1 - kw;
    let mut y = vec![0.0; b * o * ho * wo];
    for bi in 0..b {
        for oc in 0..o {
            let ybase = (bi * o + oc) * ho * wo;
            y[ybase..ybase + ho * wo].fill(bias[oc]);
            for ic in 0..c {
                let xbase = (bi * c + ic) * h * w;
                for p in 0..kh {
                    let i_lo = pad.saturating_sub(p);
                    let i_hi = (h + pad).saturating_sub(p).min(ho);
                    for q in 0..kw {
                        let wv = wt[((oc * c + ic) * kh + p) * kw + q];
                        let j_lo = pad.saturating_sub(q);
                        let j_hi = (w + pad).saturating_sub(q).min(wo);
                        for i in i_lo..i_hi {
                            let yrow = ybase + i * wo;
                            let xrow = xbase + (i + p - pad) * w;
                            for j in j_lo..j_hi {
                                y[yrow + j] += wv * x[xrow + j + q - pad];
                            }
                        }
                    }
                }
            }
        }
    }
    y
}

/// Adjoints of [`conv2d_forward`]: gradients w.r.t. input, weights, bias.
#[allow(clippy::too_many_arguments)]
pub fn conv2d_backward(
    x: &[f64],
    (b, c, h, w): (usize, usize, usize, usize),
    wt: &[f64],
    (o, kh, kw): (usize, usize, usize),
    pad: usize,
    gy: &[f64],
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let ho = h + 2 * pad + 1 - kh;
    let wo = w + 2 * pad + 1 - kw;
    let mut gx = vec![0.0; b * c * h * w];
    let mut gw = vec![0.0; o * c * kh * kw];
    let mut gb = vec![0.0; o];
    for bi in 0..b {
        for oc in 0..o {
            let ybase = (bi * o + oc) * ho * wo;
            gb[oc] += gy[ybase..ybase + ho * wo].iter().sum::<f64>();
            for ic in 0..c {
                let xbase = (bi * c + ic) * h * w;
                for p in 0..kh {
                    let i_lo = pad.saturating_sub(p);
                    let i_hi = (h + pad).saturating_sub(p).min(ho);
                    for q in 0..kw {
                        let wv = wt[((oc * c + ic) * kh + p) * kw + q];
                        let j_lo = pad.saturating_sub(q);
                        let j_hi = (w + pad).saturating_sub(q).min(wo);
                        let mut wacc = 0.0;
                        for i in i_lo..i_hi {
                            let yrow = ybase + i * wo;
                            let xrow = xbase + (i + p - pad) * w;
                            for j in j_lo..j_hi {
                                let g = gy[yrow + j];
                                wacc += g * x[xrow + j + q - pad];
                                gx[xrow + j + q - pad] += wv * g;
                            }
                        }
                        gw[((oc * c + ic) * kh + p) * kw + q] += wacc;
                    }
                }
            }
        }
    }
    (gx, gw, gb)
}

/// 2x2 mean pooling over every plane of a B x C x H x W tensor.
pub fn avgpool2_forward(x: &[f64], planes: usize, h: usize, w: usize) -> Vec<f64> {
    let (h2, w2) = (h / 2, w / 2);
    let mut y = vec![0.0; planes * h2 * w2];
    for pl in 0..planes {
        let xb = pl * h * w;
        let yb = pl * h2 * w2;
        for i in 0..h2 {
            for j in 0..w2 {
                let r0 = xb + (2 * i) * w + 2 * j;
                let r1 = xb + (2 * i + 1) * w + 2 * j;
                y[yb + i * w2 + j] = (x[r0] + x[r0 + 1] + x[r1] + x[r1 + 1]) / 4.0;
            }
        }
    }
    y
}

pub fn avgpool2_backward(gy: &[f64], planes: usize, h: usize, w: usize) -> Vec<f64> {
    let (h2, w2) = (h / 2, w / 2);
    let mut gx = vec![0.0; planes * h * w];
    for pl in 0..planes {
        let xb = pl * h * w;
        let yb = pl * h2 * w2;
        for i in 0..h2 {
            for j in 0..w2 {
                let g = gy[yb + i * w2 + j] / 4.0;
                let r0 = xb + (2 * i) * w + 2 * j;
                let r1 = xb + (2 * i + 1) * w + 2 * j;
                gx[r0] += g;
                gx[r0 + 1] += g;
                gx[r1] += g;
                gx[r1 + 1] += g;
            }
        }
    }
    gx
}

/// Per-axis source indices and blend factor for x2 bilinear upsampling
/// with half-pixel centers (`src = (dst + 0.5) / 2 - 0.5`) and clamped
/// edges, so border samples are replicated.
pub fn bilinear_axis(len: usize, i2: usize) -> (usize, usize, f64) {
    let src = (i2 as f64 + 0.5) / 2.0 - 0.5;
    let i0f = src.floor();
    let t = src - i0f;
    let hi = (len - 1) as f64;
    let i0 = i0f.clamp(0.0, hi) as usize;
    let i1 = (i0f + 1.0).clamp(0.0, hi) as usize;
    (i0, i1, t)
}

/// x2 bilinear upsampling of every plane. Interpolation is evaluated as
/// `a + t * (b - a)`, which preserves constant planes bit-exactly.
pub fn bilinear_up2_forward(x: &[f64], planes: usize, h: usize, w: usize) -> Vec<f64> {
    let (h2, w2) = (2 * h, 2 * w);
    let rows: Vec<_> = (0..h2).map(|i| bilinear_axis(h, i)).collect();
    let cols: Vec<_> = (0..w2).map(|j| bilinear_axis(w, j)).collect();
    let mut y = vec![0.0; planes * h2 * w2];
    for pl in 0..planes {
        let xb = pl * h * w;
        let yb = pl * h2 * w2;
        for (i2, &(r0, r1, tr)) in rows.iter().enumerate() {
            for (j2, &(c0, c1, tc)) in cols.iter().enumerate() {
                let top = x[xb + r0 * w + c0] + tc * (x[xb + r0 * w + c1] - x[xb + r0 * w + c0]);
                let bot = x[xb + r1 * w + c0] + tc * (x[xb + r1 * w + c1] - x[xb + r1 * w + c0]);
                y[yb + i2 * w2 + j2] = top + tr * (bot - top);
            }
        }
    }
    y
}

pub fn bilinear_up2_backward(gy: &[f64], planes: usize, h: usize, w: usize) -> Vec<f64> {
    let (h2, w2) = (2 * h, 2 * w);
    let rows: Vec<_> = (0..h2).map(|i| bilinear_axis(h, i)).collect();
    let cols: Vec<_> = (0..w2).map(|j| bilinear_axis(w, j)).collect();
    let mut gx = vec![0.0; planes * h * w];
    for pl in 0..planes {
        let xb = pl * h * w;
        let yb = pl * h2 * w2;
        for (i2, &(r0, r1, tr)) in rows.iter().enumerate() {
            for (j2, &(c0, c1, tc)) in cols.iter().enumerate() {
                let g = gy[yb + i2 * w2 + j2];
                // Adjoint of out = (1-tr)*((1-tc)a + tc b) + tr*((1-tc)c + tc d).
                gx[xb + r0 * w + c0] += (1.0 - tr) * (1.0 - tc) * g;
                gx[xb + r0 * w + c1] += (1.0 - tr) * tc * g;
                gx[xb + r1 * w + c0] += tr * (1.0 - tc) * g;
                gx[xb + r1 * w + c1] += tr * tc * g;
            }
        }
    }
    gx
}

/// In-place Cholesky factor L (lower triangle, row-major) of a symmetric
/// positive definite matrix; only the lower triangle of `a` is read.
/// Returns None when a pivot is not strictly positive or not finite.
pub fn cholesky_factor(a: &[f64], n: usize) -> Option<Vec<f64>> {
    let mut l = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let mut s = a[i * n + j];
            for k in 0..j {
                s -= l[i * n + k] * l[j * n + k];
            }
            if i == j {
                if !(s > 0.0) || !s.is_finite() {
                    return None;
                }
                l[i * n + i] = s.sqrt();
            } else {
                l[i * n + j] = s / l[j * n + j];
            }
        }
    }
    Some(l)
}

/// Solve (L L^T) X = B for a k x m right-hand side, given the factor L.
pub fn cholesky_solve(l: &[f64], n: usize, b: &[f64], m: usize) -> Vec<f64> {
    let mut x = b.to_vec();
    // Forward substitution: L y = B.
    for i in 0..n {
        for col in 0..m {
            let mut s = x[i * m + col];
            for k in 0..i {
                s -= l[i * n + k] * x[k * m + col];
            }
            x[i * m + col] = s / l[i * n + i];
        }
    }
    // Back substitution: L^T x = y.
    for i in (0..n).rev() {
        for col in 0..m {
            let mut s = x[i * m + col];
            for k in (i + 1)..n {
                s -= l[k * n + i] * x[k * m + col];
            }
            x[i * m + col] = s / l[i * n + i];
        }
    }
    x
}

/// Row-major matrix product: a (m x k) * b (k x n).
pub fn matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for p in 0..k {
            let av = a[i * k + p];
            let brow = p * n;
            let orow = i * n;
            for j in 0..n {
                out[orow + j] += av * b[brow + j];
            }
        }
    }
    out
}

pub fn transpose(a: &[f64], m: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            out[j * m + i] = a[i * n + j];
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cholesky_solves_identity() {
        let a = [1.0, 0.0, 0.0, 1.0];
        let l = cholesky_factor(&a, 2).unwrap();
        let x = cholesky_solve(&l, 2, &[3.0, 4.0], 1);
        assert_eq!(x, vec![3.0, 4.0]);
    }

    #[test]
    fn cholesky_rejects_indefinite() {
        let a = [1.0, 2.0, 2.0, 1.0];
        assert!(cholesky_factor(&a, 2).is_none());
    }

    #[test]
    fn matmul_2x2() {
        let a = [1.0, 2.0, 3.0, 4.0];
        let b = [5.0, 6.0, 7.0, 8.0];
        assert_eq!(matmul(&a, &b, 2, 2, 2), vec![19.0, 22.0, 43.0, 50.0]);
    }
}
