//! Parameter and compute accounting.
//!
//! Compute is counted in multiply-accumulates (MACs) for every matrix
//! product, convolution and attention product, plus one MAC per gated
//! element in the decoder. Softmax, normalisation, activations and
//! interpolation are not counted. [`FlopEstimate::flops`] doubles the MAC
//! count.

use crate::config::{DecoderMode, ModelConfig};
use crate::encoder::embed_geometry;
use crate::model::Model;

/// Exact number of trainable scalars.
pub fn count_parameters(model: &Model) -> usize {
    model.num_parameters()
}

/// Scalars in the decoder's change-aware attention.
pub fn count_cad_parameters(model: &Model) -> usize {
    model.store.num_scalars_with_prefix("decoder.cad.")
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct FlopEstimate {
    /// Both encoder branches.
    pub encoder_macs: f64,
    pub fusion_macs: f64,
    /// Fuse layer and classifier.
    pub head_macs: f64,
    /// Change-aware attention: gate transforms and gating products.
    pub cad_macs: f64,
}

impl FlopEstimate {
    pub fn macs(&self) -> f64 {
        self.encoder_macs + self.fusion_macs + self.head_macs + self.cad_macs
    }

    /// Two FLOPs per MAC.
    pub fn flops(&self) -> f64 {
        2.0 * self.macs()
    }

    pub fn gmacs(&self) -> f64 {
        self.macs() / 1e9
    }

    pub fn gflops(&self) -> f64 {
        self.flops() / 1e9
    }
}

/// MACs of a dense `[m, k] x [k, n]` product.
pub fn matmul_macs(m: usize, k: usize, n: usize) -> f64 {
    (m * k * n) as f64
}

/// Analytic cost of one Siamese forward pass at `height x width`.
pub fn estimate_flops(cfg: &ModelConfig, height: usize, width: usize) -> FlopEstimate {
    let mut enc = 0.0;
    let (mut h, mut w, mut cin) = (height, width, 3);
    let mut grids = Vec::with_capacity(4);
    for s in 0..4 {
        let g = embed_geometry(s);
        (h, w) = g.output_size(h, w);
        let c = cfg.stage_channels[s];
        let n = h * w;
        enc += matmul_macs(n, g.kernel * g.kernel * cin, c);
        let r = cfg.reduction_ratios[s] * cfg.reduction_ratios[s];
        let m = n / r;
        let hidden = cfg.mlp_hidden(s);
        let block = matmul_macs(n, c, c) // query
            + 2.0 * matmul_macs(m, c * r, c) // reduced key and value
            + 2.0 * matmul_macs(n, c, m) // scores and weighted sum
            + matmul_macs(n, c, c) // output projection
            + matmul_macs(n, c, hidden)
            + (n * hidden * 9) as f64 // depthwise 3x3
            + matmul_macs(n, hidden, c);
        enc += block * cfg.stage_depths[s] as f64;
        grids.push((h, w, c));
        cin = c;
    }
    let d = cfg.decoder_channels;
    let fusion: f64 = grids
        .iter()
        .map(|&(h, w, c)| matmul_macs(h * w, c, d))
        .sum();
    let (h1, w1, _) = grids[0];
    let p = h1 * w1;
    let head = matmul_macs(p, d, d) + matmul_macs(p, d, cfg.num_classes);
    let cad = if cfg.cad {
        let m = cfg.attention_bottleneck();
        let gates = match cfg.mode {
            DecoderMode::IntraClass => 3,
            DecoderMode::OutOfClass => 2,
        };
        // Pooled vectors: 1 for the channel gate, w1 + h1 profiles.
        let transforms = matmul_macs(1, d, m) + matmul_macs(1, m, d);
        let coord = if gates == 3 {
            matmul_macs(h1 + w1, d, m) + matmul_macs(w1, m, d) + matmul_macs(h1, m, d)
        } else {
            0.0
        };
        transforms + coord + (gates * p * d) as f64
    } else {
        0.0
    };
    FlopEstimate {
        encoder_macs: 2.0 * enc,
        fusion_macs: fusion,
        head_macs: head,
        cad_macs: cad,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn four_by_four_matmul_is_128_flops() {
        assert_eq!(2.0 * matmul_macs(4, 4, 4), 128.0);
    }

    #[test]
    fn convolutional_parts_scale_with_pixels() {
        let cfg = ModelConfig::default();
        let a = estimate_flops(&cfg, 256, 256);
        let b = estimate_flops(&cfg, 512, 512);
        assert!((b.fusion_macs / a.fusion_macs - 4.0).abs() < 1e-12);
        assert!((b.head_macs / a.head_macs - 4.0).abs() < 1e-12);
        // Attention grows faster than linear because N/R grows with N.
        assert!(b.encoder_macs / a.encoder_macs > 4.0);
    }

    #[test]
    fn default_budget() {
        let cfg = ModelConfig::default();
        let full = count_parameters(&Model::new(&cfg, 0));
        let plain = count_parameters(&Model::new(
            &ModelConfig {
                cad: false,
                ..cfg.clone()
            },
            0,
        ));
        let f = estimate_flops(&cfg, 512, 512);
        let fp = estimate_flops(
            &ModelConfig {
                cad: false,
                ..cfg.clone()
            },
            512,
            512,
        );
        assert!((3_700_000..=4_100_000).contains(&full), "{full}");
        assert!(full - plain < 180_000);
        assert!((7.0..=9.5).contains(&f.gmacs()), "{}", f.gmacs());
        assert!(f.gflops() - fp.gflops() <= 0.1);
    }
}
