//! The small encoder-decoder model and tiled inference.
//!
//! Encoder levels are two conv-ReLU layers followed by 2x2 mean pooling;
//! the bottleneck is two conv-ReLU layers; decoder levels upsample
//! bilinearly, concatenate the skip feature, and apply two conv-ReLU
//! layers. A 1x1 convolution maps back to image channels. When the
//! reconstruction block is enabled it is wired between the encoder
//! feature of the configured level (upstream) and the same-shaped decoder
//! feature (downstream); its output continues down the decoder.

use rand::Rng;
use rand_distr::StandardNormal;

use super::{ModelConfig, image_to_tensor, tensor_item_to_image};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::rng::{domain, stream};
use crate::ssr::{self, ConvIds, EnhancerIds, SsrIds};
use crate::tensor::{NodeId, Tape, Tensor};

/// One convolution layer's parameters.
#[derive(Debug, Clone)]
pub struct ConvLayer {
    pub name: String,
    /// O x C x Kh x Kw.
    pub w: Tensor,
    /// O.
    pub b: Tensor,
    pub pad: usize,
}

#[derive(Debug, Clone, Copy)]
struct SsrLayers {
    up_low: usize,
    up_high: usize,
    down_low: usize,
    down_high: usize,
    generator: usize,
}

/// The assembled model: an ordered list of conv layers plus the wiring
/// indices used by the forward pass.
#[derive(Debug, Clone)]
pub struct UnetModel {
    pub cfg: ModelConfig,
    pub ssr_enabled: bool,
    pub convs: Vec<ConvLayer>,
    enc: Vec<(usize, usize)>,
    bottleneck: (usize, usize),
    dec: Vec<(usize, usize)>,
    out_conv: usize,
    ssr_layers: Option<SsrLayers>,
}

/// Ids of the registered parameters of one forward pass, aligned with
/// `UnetModel::convs`, plus the output node.
pub struct ForwardPass {
    pub output: NodeId,
    pub params: Vec<(NodeId, NodeId)>,
}

fn he_conv(name: &str, o: usize, c: usize, k: usize, index: u64, seed: u64) -> ConvLayer {
    let fan_in = (c * k * k) as f64;
    let std = (2.0 / fan_in).sqrt();
    let mut rng = stream(seed, domain::INIT, index);
    let w: Vec<f64> =
        (0..o * c * k * k).map(|_| std * rng.sample::<f64, _>(StandardNormal)).collect();
    ConvLayer {
        name: name.to_string(),
        w: Tensor::from_vec(&[o, c, k, k], w).expect("kernel shape"),
        b: Tensor::zeros(&[o]),
        pad: (k - 1) / 2,
    }
}

/// Build the model with deterministic He-normal initialization.
pub fn build_model(cfg: &ModelConfig, ssr_enabled: bool, seed: u64) -> Result<UnetModel> {
    cfg.validate()?;
    let levels = cfg.levels();
    let k = cfg.kernel;
    let mut convs: Vec<ConvLayer> = Vec::new();
    let mut push = |name: String, o: usize, c: usize, kk: usize, convs: &mut Vec<ConvLayer>| {
        let idx = convs.len();
        convs.push(he_conv(&name, o, c, kk, idx as u64, seed));
        idx
    };

    let mut enc = Vec::with_capacity(levels);
    let mut prev = cfg.in_channels;
    for (lvl, &width) in cfg.channels.iter().enumerate() {
        let c1 = push(format!("enc{lvl}.conv1"), width, prev, k, &mut convs);
        let c2 = push(format!("enc{lvl}.conv2"), width, width, k, &mut convs);
        enc.push((c1, c2));
        prev = width;
    }
    let b1 = push("bottleneck.conv1".to_string(), cfg.bottleneck, prev, k, &mut convs);
    let b2 = push("bottleneck.conv2".to_string(), cfg.bottleneck, cfg.bottleneck, k, &mut convs);

    let mut dec = vec![(0usize, 0usize); levels];
    let mut below = cfg.bottleneck;
    for lvl in (0..levels).rev() {
        let width = cfg.channels[lvl];
        let c1 = push(format!("dec{lvl}.conv1"), width, below + width, k, &mut convs);
        let c2 = push(format!("dec{lvl}.conv2"), width, width, k, &mut convs);
        dec[lvl] = (c1, c2);
        below = width;
    }
    let out_conv = push("out.conv".to_string(), cfg.in_channels, cfg.channels[0], 1, &mut convs);

    let ssr_layers = if ssr_enabled {
        let c = cfg.channels[cfg.ssr.placement];
        let ek = cfg.ssr.enhancer_kernel;
        Some(SsrLayers {
            up_low: push("ssr.enh_up_low".to_string(), c, c, ek, &mut convs),
            up_high: push("ssr.enh_up_high".to_string(), c, c, ek, &mut convs),
            down_low: push("ssr.enh_down_low".to_string(), c, c, ek, &mut convs),
            down_high: push("ssr.enh_down_high".to_string(), c, c, ek, &mut convs),
            generator: push("ssr.generator".to_string(), cfg.ssr.k, 4 * c, ek, &mut convs),
        })
    } else {
        None
    };

    Ok(UnetModel { cfg: cfg.clone(), ssr_enabled, convs, enc, bottleneck: (b1, b2), dec, out_conv, ssr_layers })
}

impl UnetModel {
    pub fn param_count(&self) -> usize {
        self.convs.iter().map(|c| c.w.numel() + c.b.numel()).sum()
    }

    pub fn layer_names(&self) -> Vec<&str> {
        self.convs.iter().map(|c| c.name.as_str()).collect()
    }

    fn conv_ids(&self, idx: usize, params: &[(NodeId, NodeId)]) -> ConvIds {
        ConvIds { w: params[idx].0, b: params[idx].1, pad: self.convs[idx].pad }
    }

    /// Register all parameters on the tape and run the forward graph.
    pub fn forward(&mut self, tape: &mut Tape, x: NodeId) -> Result<ForwardPass> {
        let levels = self.cfg.levels();
        let shape = tape.shape(x).to_vec();
        if shape.len() != 4 || shape[1] != self.cfg.in_channels {
            return Err(Error::shape(format!(
                "forward: input {shape:?} incompatible with {} channels",
                self.cfg.in_channels
            )));
        }
        let div = 1usize << levels;
        if shape[2] % div != 0 || shape[3] % div != 0 || shape[2] == 0 || shape[3] == 0 {
            return Err(Error::shape(format!(
                "forward: spatial extents {}x{} must be divisible by {div}",
                shape[2], shape[3]
            )));
        }

        let params: Vec<(NodeId, NodeId)> = self
            .convs
            .iter_mut()
            .map(|c| (tape.param(&mut c.w), tape.param(&mut c.b)))
            .collect();

        let conv_relu = |tape: &mut Tape, x: NodeId, idx: usize| -> Result<NodeId> {
            let ids = ConvIds { w: params[idx].0, b: params[idx].1, pad: self.convs[idx].pad };
            let y = tape.conv2d(x, ids.w, ids.b, ids.pad)?;
            Ok(tape.relu(y))
        };

        let mut skips = Vec::with_capacity(levels);
        let mut cur = x;
        for lvl in 0..levels {
            cur = conv_relu(tape, cur, self.enc[lvl].0)?;
            cur = conv_relu(tape, cur, self.enc[lvl].1)?;
            skips.push(cur);
            cur = tape.avgpool2(cur)?;
        }
        cur = conv_relu(tape, cur, self.bottleneck.0)?;
        cur = conv_relu(tape, cur, self.bottleneck.1)?;
        for lvl in (0..levels).rev() {
            cur = tape.bilinear_up2(cur)?;
            cur = tape.concat_channels(cur, skips[lvl])?;
            cur = conv_relu(tape, cur, self.dec[lvl].0)?;
            cur = conv_relu(tape, cur, self.dec[lvl].1)?;
            if let Some(sl) = self.ssr_layers {
                if self.ssr_enabled && lvl == self.cfg.ssr.placement {
                    let ids = SsrIds {
                        enhancer: EnhancerIds {
                            up_low: self.conv_ids(sl.up_low, &params),
                            up_high: self.conv_ids(sl.up_high, &params),
                            down_low: self.conv_ids(sl.down_low, &params),
                            down_high: self.conv_ids(sl.down_high, &params),
                        },
                        generator: self.conv_ids(sl.generator, &params),
                    };
                    cur = ssr::ssr_apply(tape, skips[lvl], cur, &ids, &self.cfg.ssr)?;
                }
            }
        }
        let ids = ConvIds {
            w: params[self.out_conv].0,
            b: params[self.out_conv].1,
            pad: self.convs[self.out_conv].pad,
        };
        let output = tape.conv2d(cur, ids.w, ids.b, ids.pad)?;
        Ok(ForwardPass { output, params })
    }

    /// Forward on a batch tensor without gradient bookkeeping.
    pub fn infer(&mut self, input: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let x = tape.leaf(input);
        let pass = self.forward(&mut tape, x)?;
        Ok(tape.tensor(pass.output))
    }
}

/// Mirror-pad an image on the bottom/right to the given extents.
fn reflect_pad(img: &Image, to_h: usize, to_w: usize) -> Image {
    let mut out = Image::zeros(img.channels, to_h, to_w);
    for c in 0..img.channels {
        for i in 0..to_h {
            let si = if i < img.height { i } else { 2 * img.height - 2 - i.min(2 * img.height - 2) };
            let si = si.min(img.height - 1);
            for j in 0..to_w {
                let sj =
                    if j < img.width { j } else { 2 * img.width - 2 - j.min(2 * img.width - 2) };
                let sj = sj.min(img.width - 1);
                out.set_pixel(c, i, j, img.pixel(c, si, sj));
            }
        }
    }
    out
}

fn core_starts(total: usize, tile: usize, margin: usize, core: usize) -> Vec<(usize, usize, usize)> {
    // (core_begin, core_end, tile_start) per core stripe.
    if tile >= total {
        return vec![(0, total, 0)];
    }
    let mut out = Vec::new();
    let mut begin = 0;
    while begin < total {
        let end = (begin + core).min(total);
        let start = begin.saturating_sub(margin).min(total - tile);
        out.push((begin, end, start));
        begin = end;
    }
    out
}

/// Denoise an image of arbitrary extent: reflect-pad to multiples of
/// `patch`, run overlapping tiles (extent `3*patch`, written core
/// `patch`), and crop back. Tiles are windows into the padded image, so
/// interior outputs match a single full pass exactly; the output is not
/// clipped (clipping happens on export).
pub fn denoise(model: &mut UnetModel, noisy: &Image, patch: usize) -> Result<Image> {
    if noisy.channels != model.cfg.in_channels {
        return Err(Error::shape(format!(
            "denoise: image has {} channels, model expects {}",
            noisy.channels, model.cfg.in_channels
        )));
    }
    let div = 1usize << model.cfg.levels();
    if patch == 0 || patch % div != 0 {
        return Err(Error::config(format!("denoise: patch {patch} must be divisible by {div}")));
    }
    let (h, w) = (noisy.height, noisy.width);
    let ph = h.div_ceil(patch) * patch;
    let pw = w.div_ceil(patch) * patch;
    let padded = reflect_pad(noisy, ph, pw);

    let tile_h = (3 * patch).min(ph);
    let tile_w = (3 * patch).min(pw);
    let mut out = Image::zeros(noisy.channels, ph, pw);
    let rows = core_starts(ph, tile_h, patch, patch);
    let cols = core_starts(pw, tile_w, patch, patch);
    let mut last: Option<(usize, usize, Tensor)> = None;
    for &(rb, re, rs) in &rows {
        for &(cb, ce, cs) in &cols {
            let cached = matches!(&last, Some((lr, lc, _)) if *lr == rs && *lc == cs);
            if !cached {
                let tile = padded.crop(rs, cs, tile_h, tile_w)?;
                let y = model.infer(&image_to_tensor(&tile))?;
                last = Some((rs, cs, y));
            }
            let y = &last.as_ref().expect("tile cached").2;
            let yd = y.data();
            for c in 0..noisy.channels {
                for i in rb..re {
                    for j in cb..ce {
                        let v = yd[(c * tile_h + (i - rs)) * tile_w + (j - cs)];
                        out.set_pixel(c, i, j, v);
                    }
                }
            }
        }
    }
    out.crop(0, 0, h, w)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zeroed_output_conv_gives_zero_output() {
        let cfg = ModelConfig::default();
        let mut model = build_model(&cfg, true, 7).unwrap();
        let out_idx = model.out_conv;
        for v in model.convs[out_idx].w.data_mut() {
            *v = 0.0;
        }
        let x = Tensor::from_vec(&[1, 1, 16, 16], (0..256).map(|i| i as f64 / 256.0).collect())
            .unwrap();
        let y = model.infer(&x).unwrap();
        assert!(y.data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn forward_preserves_shape() {
        let cfg = ModelConfig::default();
        let mut model = build_model(&cfg, true, 3).unwrap();
        let x = Tensor::zeros(&[1, 1, 32, 32]);
        let y = model.infer(&x).unwrap();
        assert_eq!(y.shape(), &[1, 1, 32, 32]);
        // Extents not divisible by 2^levels are rejected.
        let bad = Tensor::zeros(&[1, 1, 30, 32]);
        assert!(model.infer(&bad).is_err());
    }

    #[test]
    fn param_count_matches_closed_form() {
        let cfg = ModelConfig::default();
        let model = build_model(&cfg, true, 0).unwrap();
        // Independent arithmetic over the default layout: channels
        // (16, 32), bottleneck 64, 3x3 kernels, 1 input channel, SSR at
        // the finest level with k = 8 and 3x3 blocks.
        let conv = |o: usize, c: usize, k: usize| o * c * k * k + o;
        let want = conv(16, 1, 3)
            + conv(16, 16, 3)
            + conv(32, 16, 3)
            + conv(32, 32, 3)
            + conv(64, 32, 3)
            + conv(64, 64, 3)
            + conv(32, 96, 3)
            + conv(32, 32, 3)
            + conv(16, 48, 3)
            + conv(16, 16, 3)
            + conv(1, 16, 1)
            + 4 * conv(16, 16, 3)
            + conv(8, 64, 3);
        assert_eq!(model.param_count(), want);
    }

    #[test]
    fn model_without_ssr_has_no_ssr_layers() {
        let cfg = ModelConfig::default();
        let model = build_model(&cfg, false, 0).unwrap();
        assert!(model.layer_names().iter().all(|n| !n.starts_with("ssr.")));
    }

    #[test]
    fn reflect_pad_mirrors_edges() {
        let img = Image::from_plane(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let p = reflect_pad(&img, 4, 4);
        assert_eq!(p.pixel(0, 2, 0), 1.0); // row 2 mirrors row 0
        assert_eq!(p.pixel(0, 0, 2), 1.0); // col 2 mirrors col 0
        assert_eq!(p.pixel(0, 3, 3), 4.0);
    }
}
