//! Spectral separation and low-rank reconstruction.
//!
//! Features are split into a low-frequency part (2x2 mean pooling) and the
//! high-frequency remainder (the difference against its bilinear
//! re-upsampling). Both halves of both endpoint features are enhanced by
//! small conv blocks and concatenated into a basis-extraction feature; a
//! conv block maps that to `k` channel maps which, tiled across channels,
//! form the columns of a basis matrix `V`. The decoder feature is then
//! rebuilt by orthogonal projection onto the span of `V`:
//!
//! `y = V (V^T V + eps I)^{-1} V^T x`
//!
//! evaluated as two small solves — the N x N projector is never formed.
//! Everything runs on the tape, so gradients flow through `V` and `x`
//! (the regularizer `eps` is a forward-time constant).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{NodeId, Tape};

fn default_k() -> usize {
    8
}
fn default_eps_scale() -> f64 {
    1e-6
}
fn default_eps_floor() -> f64 {
    1e-12
}
fn default_enhancer_kernel() -> usize {
    3
}

/// Configuration of one reconstruction block.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct SsrConfig {
    /// Number of generated basis vectors.
    pub k: usize,
    /// Gram regularizer rule: `eps = eps_scale * trace(V^T V) / k`.
    pub eps_scale: f64,
    /// Lower bound on the regularizer, so a zero basis still solves.
    pub eps_floor: f64,
    /// Encoder/decoder level whose features feed the block (0 = finest).
    pub placement: usize,
    /// Add the reconstruction to the decoder feature instead of
    /// replacing it.
    pub residual: bool,
    /// Kernel extent of the enhancer and generator conv blocks.
    pub enhancer_kernel: usize,
}

impl Default for SsrConfig {
    fn default() -> Self {
        SsrConfig {
            k: default_k(),
            eps_scale: default_eps_scale(),
            eps_floor: default_eps_floor(),
            placement: 0,
            residual: false,
            enhancer_kernel: default_enhancer_kernel(),
        }
    }
}

impl SsrConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::config("ssr: k must be >= 1".to_string()));
        }
        if self.eps_scale < 0.0 || self.eps_floor <= 0.0 {
            return Err(Error::config("ssr: regularizer must be positive".to_string()));
        }
        if self.enhancer_kernel % 2 == 0 {
            return Err(Error::config("ssr: enhancer kernel must be odd".to_string()));
        }
        Ok(())
    }
}

/// Low/high frequency decomposition of a feature tensor. By construction
/// `bilinear_up2(f_low) + f_high` reproduces the source.
#[derive(Debug, Clone, Copy)]
pub struct FrequencySplit {
    /// B x C x H/2 x W/2.
    pub f_low: NodeId,
    /// B x C x H x W.
    pub f_high: NodeId,
}

/// Split a B x C x H x W feature into its pooled low-frequency part and
/// the high-frequency remainder.
pub fn freq_split(tape: &mut Tape, f: NodeId) -> Result<FrequencySplit> {
    let f_low = tape.avgpool2(f)?;
    let up = tape.bilinear_up2(f_low)?;
    let f_high = tape.sub(f, up)?;
    Ok(FrequencySplit { f_low, f_high })
}

/// Tape node ids of one registered conv block (weights and bias).
#[derive(Debug, Clone, Copy)]
pub struct ConvIds {
    pub w: NodeId,
    pub b: NodeId,
    pub pad: usize,
}

/// The four enhancer conv blocks of a reconstruction block.
#[derive(Debug, Clone, Copy)]
pub struct EnhancerIds {
    pub up_low: ConvIds,
    pub up_high: ConvIds,
    pub down_low: ConvIds,
    pub down_high: ConvIds,
}

fn enhance(tape: &mut Tape, x: NodeId, low: ConvIds, high: ConvIds) -> Result<NodeId> {
    let split = freq_split(tape, x)?;
    let lo = tape.conv2d(split.f_low, low.w, low.b, low.pad)?;
    let lo = tape.relu(lo);
    let lo = tape.bilinear_up2(lo)?;
    let hi = tape.conv2d(split.f_high, high.w, high.b, high.pad)?;
    let hi = tape.relu(hi);
    tape.concat_channels(lo, hi)
}

/// Build the basis-extraction feature from same-shaped upstream and
/// downstream features: each is frequency-split and enhanced (low path
/// conv block then re-upsample, high path conv block), the halves are
/// concatenated per feature, then across features. Output has four times
/// the input channel count.
pub fn build_basis_input(
    tape: &mut Tape,
    x_up: NodeId,
    x_down: NodeId,
    enh: &EnhancerIds,
) -> Result<NodeId> {
    if tape.shape(x_up) != tape.shape(x_down) {
        return Err(Error::shape(format!(
            "ssr inputs must match: {:?} vs {:?}",
            tape.shape(x_up),
            tape.shape(x_down)
        )));
    }
    let eu = enhance(tape, x_up, enh.up_low, enh.up_high)?;
    let ed = enhance(tape, x_down, enh.down_low, enh.down_high)?;
    tape.concat_channels(eu, ed)
}

/// Basis matrix for one batch item: `node` is N x k on the tape, with
/// `eps` resolved by the Gram regularizer rule.
#[derive(Debug, Clone, Copy)]
pub struct LowRankBasis {
    pub node: NodeId,
    pub n: usize,
    pub k: usize,
    pub eps: f64,
}

/// Turn one batch item's k channel maps (k x H x W) into a basis matrix
/// V of shape (copies*H*W) x k by channel-tiling: column j is channel j
/// flattened row-major and repeated `copies` times. Resolves `eps` from
/// the current values: `trace(V^T V)` equals the squared Frobenius norm
/// of V, so no Gram matrix is needed here.
pub fn generate_basis(
    tape: &mut Tape,
    maps_item: NodeId,
    copies: usize,
    cfg: &SsrConfig,
) -> Result<LowRankBasis> {
    let s = tape.shape(maps_item);
    if s.len() != 3 {
        return Err(Error::shape(format!("generate_basis expects k x H x W maps, got {s:?}")));
    }
    let (k, h, w) = (s[0], s[1], s[2]);
    let n = copies * h * w;
    if k > n {
        return Err(Error::shape(format!("generate_basis: k = {k} exceeds basis length {n}")));
    }
    let node = tape.tile_channels(maps_item, copies)?;
    let frob_sq: f64 = tape.value(node).iter().map(|v| v * v).sum();
    let eps = (cfg.eps_scale * frob_sq / k as f64).max(cfg.eps_floor);
    Ok(LowRankBasis { node, n, k, eps })
}

/// Project an N-vector onto the span of the basis:
/// `y = V (V^T V + eps I)^{-1} V^T x`, via one k x k solve. Differentiable
/// through both `V` and `x`; never materializes the N x N projector.
pub fn project_reconstruct(
    tape: &mut Tape,
    basis: &LowRankBasis,
    x_flat: NodeId,
    context: &str,
) -> Result<NodeId> {
    let sx = tape.shape(x_flat);
    if sx != [basis.n, 1] {
        return Err(Error::shape(format!(
            "project_reconstruct: x shape {:?} vs basis length {}",
            sx, basis.n
        )));
    }
    let vt = tape.transpose(basis.node)?;
    let gram0 = tape.matmul(vt, basis.node)?;
    let gram = tape.add_scaled_identity(gram0, basis.eps)?;
    let vtx = tape.matmul(vt, x_flat)?;
    let coeff = tape.solve_small(gram, vtx, context)?;
    tape.matmul(basis.node, coeff)
}

/// Parameter node ids for a whole reconstruction block.
#[derive(Debug, Clone, Copy)]
pub struct SsrIds {
    pub enhancer: EnhancerIds,
    pub generator: ConvIds,
}

/// Apply the full block: build the basis input, generate per-item bases
/// from the generator conv block, and reconstruct each batch item of
/// `x_down` by projection. Returns a tensor shaped like `x_down`
/// (replacement semantics; residual mode adds it to `x_down`).
pub fn ssr_apply(
    tape: &mut Tape,
    x_up: NodeId,
    x_down: NodeId,
    ids: &SsrIds,
    cfg: &SsrConfig,
) -> Result<NodeId> {
    cfg.validate()?;
    let shape = tape.shape(x_down).to_vec();
    let (bsz, c, h, w) = (shape[0], shape[1], shape[2], shape[3]);
    let xe = build_basis_input(tape, x_up, x_down, &ids.enhancer)?;
    let maps = tape.conv2d(xe, ids.generator.w, ids.generator.b, ids.generator.pad)?;
    let mut items = Vec::with_capacity(bsz);
    for b in 0..bsz {
        let maps_item = tape.select_batch(maps, b)?;
        let basis = generate_basis(tape, maps_item, c, cfg)?;
        let xd_item = tape.select_batch(x_down, b)?;
        let x_flat = tape.reshape(xd_item, &[c * h * w, 1])?;
        let y_flat = project_reconstruct(tape, &basis, x_flat, &format!("ssr item {b}"))?;
        items.push(tape.reshape(y_flat, &[c, h, w])?);
    }
    let y = tape.stack_batch(&items)?;
    if cfg.residual {
        tape.add(x_down, y)
    } else {
        Ok(y)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    #[test]
    fn freq_split_of_constant_has_zero_high_part() {
        let mut tape = Tape::new();
        let f = tape.leaf(&Tensor::from_vec(&[1, 2, 4, 4], vec![0.8; 32]).unwrap());
        let split = freq_split(&mut tape, f).unwrap();
        assert!(tape.value(split.f_high).iter().all(|v| *v == 0.0));
        assert!(tape.value(split.f_low).iter().all(|v| *v == 0.8));
    }

    #[test]
    fn freq_split_reconstruction_identity() {
        let mut tape = Tape::new();
        let data: Vec<f64> = (0..128).map(|i| ((i * 37 % 41) as f64) / 41.0 - 0.5).collect();
        let f = tape.leaf(&Tensor::from_vec(&[1, 2, 8, 8], data.clone()).unwrap());
        let split = freq_split(&mut tape, f).unwrap();
        let up = tape.bilinear_up2(split.f_low).unwrap();
        let recon = tape.add(up, split.f_high).unwrap();
        for (a, b) in tape.value(recon).iter().zip(&data) {
            assert!((a - b).abs() < 1e-12);
        }
        let odd = tape.leaf(&Tensor::zeros(&[1, 1, 3, 4]));
        assert!(freq_split(&mut tape, odd).is_err());
    }

    #[test]
    fn generate_basis_rejects_k_above_n() {
        let mut tape = Tape::new();
        let maps = tape.leaf(&Tensor::zeros(&[9, 2, 2])); // k=9 > n=1*2*2=4
        let cfg = SsrConfig { k: 9, ..SsrConfig::default() };
        assert!(generate_basis(&mut tape, maps, 1, &cfg).is_err());
    }

    #[test]
    fn generate_basis_tiles_channels_columnwise() {
        let mut tape = Tape::new();
        // k=2 maps of 1x2: channel 0 = [1, 2], channel 1 = [3, 4].
        let maps = tape.leaf(&Tensor::from_vec(&[2, 1, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let cfg = SsrConfig { k: 2, ..SsrConfig::default() };
        let basis = generate_basis(&mut tape, maps, 3, &cfg).unwrap();
        assert_eq!((basis.n, basis.k), (6, 2));
        // Column j = channel j tiled three times.
        let v = tape.value(basis.node);
        for t in 0..3 {
            assert_eq!(v[(t * 2) * 2], 1.0);
            assert_eq!(v[(t * 2 + 1) * 2], 2.0);
            assert_eq!(v[(t * 2) * 2 + 1], 3.0);
            assert_eq!(v[(t * 2 + 1) * 2 + 1], 4.0);
        }
    }

    #[test]
    fn zero_basis_projects_to_near_zero() {
        let mut tape = Tape::new();
        let maps = tape.leaf(&Tensor::zeros(&[2, 2, 2]));
        let cfg = SsrConfig { k: 2, ..SsrConfig::default() };
        let basis = generate_basis(&mut tape, maps, 1, &cfg).unwrap();
        assert_eq!(basis.eps, cfg.eps_floor);
        let x = tape.leaf(&Tensor::from_vec(&[4, 1], vec![1.0, -2.0, 3.0, 0.5]).unwrap());
        let y = project_reconstruct(&mut tape, &basis, x, "zero-basis").unwrap();
        assert!(tape.value(y).iter().all(|v| v.abs() < 1e-9));
    }

    #[test]
    fn rank_one_projection_keeps_first_coordinate() {
        let mut tape = Tape::new();
        let e1 = tape.leaf(&Tensor::from_vec(&[4, 1], vec![1.0, 0.0, 0.0, 0.0]).unwrap());
        let basis = LowRankBasis { node: e1, n: 4, k: 1, eps: 1e-12 };
        let x = tape.leaf(&Tensor::from_vec(&[4, 1], vec![0.7, -1.1, 2.2, 0.4]).unwrap());
        let y = project_reconstruct(&mut tape, &basis, x, "e1").unwrap();
        let yv = tape.value(y);
        assert!((yv[0] - 0.7).abs() < 1e-9);
        assert!(yv[1..].iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn projection_fixes_vectors_in_span() {
        let mut tape = Tape::new();
        // Orthonormal 2-column basis in R^4.
        let v = tape.leaf(
            &Tensor::from_vec(
                &[4, 2],
                vec![0.5, 0.5, 0.5, -0.5, 0.5, 0.5, 0.5, -0.5],
            )
            .unwrap(),
        );
        let basis = LowRankBasis { node: v, n: 4, k: 2, eps: 1e-12 };
        // x = 2*col0 - col1 lies in the span.
        let x = tape.leaf(&Tensor::from_vec(&[4, 1], vec![0.5, 1.5, 0.5, 1.5]).unwrap());
        let y = project_reconstruct(&mut tape, &basis, x, "span").unwrap();
        for (a, b) in tape.value(y).iter().zip(tape.value(x)) {
            assert!((a - b).abs() < 1e-8);
        }
    }
}
