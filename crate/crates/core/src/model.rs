//! The full Siamese network: shared encoder, fusion, distance map, decoder.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use siamdefect_grad::{ParamStore, Tape, Tensor, Var};

use crate::config::{DecoderMode, ModelConfig};
use crate::decoder::Decoder;
use crate::encoder::Encoder;
use crate::error::Result;
use crate::fusion::{align_concat, dist_map, Fusion};
use crate::nn::Builder;

/// Network structure plus its parameter values.
#[derive(Debug, Clone)]
pub struct Model {
    pub config: ModelConfig,
    pub store: ParamStore,
    pub encoder: Encoder,
    pub fusion: Fusion,
    pub decoder: Decoder,
}

/// Tape handles of one forward pass.
#[derive(Debug, Clone, Copy)]
pub struct Forward {
    /// `[H/4, W/4, D]` fused differences.
    pub fused: Var,
    /// `[H/4, W/4, 1]` distance between the aligned branch features.
    pub dist: Var,
    /// `[H/4, W/4, num_classes]`.
    pub logits_low: Var,
    /// `[H, W, num_classes]`, bilinear upsample of `logits_low`.
    pub logits: Var,
}

/// Plain values of a forward pass, for inference.
#[derive(Debug, Clone)]
pub struct Prediction {
    pub logits: Tensor,
    pub dist: Tensor,
}

impl Model {
    /// Randomly initialised model; identical seeds give identical weights.
    pub fn new(config: &ModelConfig, seed: u64) -> Self {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut b = Builder::new(&mut store, &mut rng);
        let encoder = Encoder::new(&mut b, config, 4);
        let fusion = Fusion::new(&mut b, config, 4);
        let decoder = Decoder::new(&mut b, config);
        Self {
            config: config.clone(),
            store,
            encoder,
            fusion,
            decoder,
        }
    }

    pub fn mode(&self) -> DecoderMode {
        self.decoder.mode
    }

    pub fn num_parameters(&self) -> usize {
        self.store.num_scalars()
    }

    /// Records a forward pass of `[H, W, 3]` NG and OK images.
    pub fn forward(&self, tape: &mut Tape, ng: Var, ok: Var) -> Result<Forward> {
        let (h, w) = (tape.shape(ng)[0], tape.shape(ng)[1]);
        let (p_ng, p_ok) = self.encoder.siamese_encode(tape, &self.store, ng, ok)?;
        let f_ng = align_concat(tape, &p_ng);
        let f_ok = align_concat(tape, &p_ok);
        let dist = dist_map(tape, f_ng, f_ok)?;
        let fused = self
            .fusion
            .fuse_differences(tape, &self.store, &p_ng, &p_ok)?;
        let logits_low = self.decoder.decode(tape, &self.store, fused, dist)?;
        let logits = tape.resize_bilinear(logits_low, h, w);
        Ok(Forward {
            fused,
            dist,
            logits_low,
            logits,
        })
    }

    /// Forward pass without gradient bookkeeping.
    pub fn predict(&self, ng: &Tensor, ok: &Tensor) -> Result<Prediction> {
        let mut tape = Tape::inference();
        let a = tape.constant(ng.clone());
        let b = tape.constant(ok.clone());
        let f = self.forward(&mut tape, a, b)?;
        Ok(Prediction {
            logits: tape.value(f.logits).clone(),
            dist: tape.value(f.dist).clone(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_weights() {
        let cfg = ModelConfig::default();
        let a = Model::new(&cfg, 11);
        let b = Model::new(&cfg, 11);
        assert_eq!(a.store, b.store);
        let c = Model::new(&cfg, 12);
        assert_ne!(a.store, c.store);
    }

    #[test]
    fn forward_shapes() {
        let cfg = ModelConfig::default();
        let m = Model::new(&cfg, 0);
        let img = Tensor::from_fn([64, 64, 3], |i| ((i % 13) as f64) * 0.1);
        let p = m.predict(&img, &img).unwrap();
        assert_eq!(p.logits.shape(), &[64, 64, 3]);
        assert_eq!(p.dist.shape(), &[16, 16, 1]);
        assert_eq!(p.dist.max_abs(), 0.0);
    }
}
