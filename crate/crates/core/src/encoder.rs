//! Hierarchical transformer encoder with sequence-reduction attention.
//!
//! Each stage embeds its input with an overlapping strided convolution and
//! then runs a stack of blocks: reduced-key/value attention followed by a
//! Mix-FFN (linear, depthwise 3x3, GELU, linear), both residual.

use rand::Rng;
use siamdefect_grad::{ConvGeometry, ParamStore, Tape, Var};

use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::nn::{Builder, Conv2d, DepthwiseConv, LayerNorm, Linear};

/// Weights of one sequence-reduction attention layer.
///
/// `key` and `value` map a group of `R` concatenated tokens (`C * R` wide)
/// back to `C`. With `R = 1` they are ordinary key/value projections.
#[derive(Debug, Clone)]
pub struct SraWeights {
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub proj: Linear,
    pub heads: usize,
    pub ratio: usize,
}

impl SraWeights {
    pub fn new<R: Rng>(
        b: &mut Builder<'_, R>,
        name: &str,
        channels: usize,
        heads: usize,
        ratio: usize,
    ) -> Self {
        b.scoped(name, |b| Self {
            query: Linear::new(b, "query", channels, channels, true),
            key: Linear::new(b, "key", channels * ratio, channels, true),
            value: Linear::new(b, "value", channels * ratio, channels, true),
            proj: Linear::new(b, "proj", channels, channels, true),
            heads,
            ratio,
        })
    }
}

/// Multi-head scaled dot-product attention on already projected `[N, C]`
/// queries and `[M, C]` keys/values. Heads split the channel axis.
pub fn multi_head_attention(tape: &mut Tape, q: Var, k: Var, v: Var, heads: usize) -> Var {
    let c = tape.shape(q)[1];
    let dh = c / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut outs = Vec::with_capacity(heads);
    for h in 0..heads {
        let (qh, kh, vh) = if heads == 1 {
            (q, k, v)
        } else {
            (
                tape.slice_cols(q, h * dh, dh),
                tape.slice_cols(k, h * dh, dh),
                tape.slice_cols(v, h * dh, dh),
            )
        };
        let scores = tape.matmul_t(qh, false, kh, true);
        let scores = tape.scale(scores, scale);
        let attn = tape.softmax_rows(scores);
        outs.push(tape.matmul(attn, vh));
    }
    if heads == 1 {
        outs[0]
    } else {
        tape.concat_cols(&outs)
    }
}

/// Sequence-reduction attention.
///
/// `q` is `[N, C]`, `kv` is `[M, C]`. The key/value sequence is reshaped to
/// `[M / R, C * R]` (groups of `R` consecutive rows) and projected back to
/// `C` channels before attention, so the score matrix is `N x M/R`.
pub fn sra_attention(
    tape: &mut Tape,
    store: &ParamStore,
    w: &SraWeights,
    q: Var,
    kv: Var,
) -> Result<Var> {
    let (qs, kvs) = (tape.shape(q).to_vec(), tape.shape(kv).to_vec());
    if qs.len() != 2 || kvs.len() != 2 {
        return Err(Error::Shape(format!(
            "attention expects token matrices, got {qs:?} and {kvs:?}"
        )));
    }
    if qs[1] != kvs[1] {
        return Err(Error::Shape(format!(
            "query has {} channels but key/value has {}",
            qs[1], kvs[1]
        )));
    }
    let (m, c, r) = (kvs[0], kvs[1], w.ratio);
    if r == 0 || m % r != 0 {
        return Err(Error::Shape(format!(
            "key/value length {m} is not divisible by reduction ratio {r}"
        )));
    }
    if c % w.heads != 0 {
        return Err(Error::Shape(format!(
            "{c} channels do not split into {} heads",
            w.heads
        )));
    }
    let grouped = if r == 1 {
        kv
    } else {
        tape.reshape(kv, [m / r, c * r])
    };
    let qp = w.query.forward(tape, store, q);
    let kp = w.key.forward(tape, store, grouped);
    let vp = w.value.forward(tape, store, grouped);
    let out = multi_head_attention(tape, qp, kp, vp, w.heads);
    Ok(w.proj.forward(tape, store, out))
}

/// Row order that lists the tokens of a `h x w` grid window by window,
/// each `r x r` window in raster order. Consecutive groups of `r * r` rows
/// then cover exactly one spatial window.
pub fn window_order(h: usize, w: usize, r: usize) -> Vec<usize> {
    assert!(
        h.is_multiple_of(r) && w.is_multiple_of(r),
        "{h}x{w} grid does not tile by {r}"
    );
    let mut idx = Vec::with_capacity(h * w);
    for wy in 0..h / r {
        for wx in 0..w / r {
            for dy in 0..r {
                for dx in 0..r {
                    idx.push((wy * r + dy) * w + wx * r + dx);
                }
            }
        }
    }
    idx
}

#[derive(Debug, Clone)]
pub struct Block {
    pub norm1: LayerNorm,
    pub attn: SraWeights,
    pub norm2: LayerNorm,
    pub fc1: Linear,
    pub dwconv: DepthwiseConv,
    pub fc2: Linear,
    /// Reduction along each spatial axis; the sequence shrinks by its square.
    pub side_ratio: usize,
}

impl Block {
    fn new<R: Rng>(
        b: &mut Builder<'_, R>,
        name: &str,
        c: usize,
        heads: usize,
        side_ratio: usize,
        hidden: usize,
    ) -> Self {
        b.scoped(name, |b| Self {
            norm1: LayerNorm::new(b, "norm1", c),
            attn: SraWeights::new(b, "attn", c, heads, side_ratio * side_ratio),
            norm2: LayerNorm::new(b, "norm2", c),
            fc1: Linear::new(b, "fc1", c, hidden, true),
            dwconv: DepthwiseConv::new(b, "dwconv", hidden, 3),
            fc2: Linear::new(b, "fc2", hidden, c, true),
            side_ratio,
        })
    }

    /// `x` is `[h * w, C]` in raster order.
    fn forward(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        x: Var,
        h: usize,
        w: usize,
    ) -> Result<Var> {
        let n = self.norm1.forward(tape, store, x);
        let kv = if self.side_ratio == 1 {
            n
        } else {
            tape.gather_rows(n, window_order(h, w, self.side_ratio))
        };
        let a = sra_attention(tape, store, &self.attn, n, kv)?;
        let x = tape.add(x, a);

        let n = self.norm2.forward(tape, store, x);
        let f = self.fc1.forward(tape, store, n);
        let hidden = tape.shape(f)[1];
        let f = tape.reshape(f, [h, w, hidden]);
        let f = self.dwconv.forward(tape, store, f);
        let f = tape.reshape(f, [h * w, hidden]);
        let f = tape.gelu(f);
        let f = self.fc2.forward(tape, store, f);
        Ok(tape.add(x, f))
    }
}

#[derive(Debug, Clone)]
pub struct Stage {
    pub embed: Conv2d,
    pub embed_norm: LayerNorm,
    pub blocks: Vec<Block>,
    pub norm: LayerNorm,
}

/// Patch-embedding geometry: stride 4 for the first stage, 2 afterwards.
pub fn embed_geometry(stage: usize) -> ConvGeometry {
    if stage == 0 {
        ConvGeometry {
            kernel: 7,
            stride: 4,
            padding: 3,
        }
    } else {
        ConvGeometry {
            kernel: 3,
            stride: 2,
            padding: 1,
        }
    }
}

/// Four stage feature maps at strides 4, 8, 16, 32, each `[H, W, C]`.
pub type FeaturePyramid = Vec<Var>;

#[derive(Debug, Clone)]
pub struct Encoder {
    pub stages: Vec<Stage>,
}

impl Encoder {
    /// Builds the first `num_stages` stages of the configured encoder.
    pub fn new<R: Rng>(b: &mut Builder<'_, R>, cfg: &ModelConfig, num_stages: usize) -> Self {
        let mut cin = 3;
        let mut stages = Vec::with_capacity(num_stages);
        b.scoped("encoder", |b| {
            for s in 0..num_stages {
                let c = cfg.stage_channels[s];
                let stage = b.scoped(&format!("stage{s}"), |b| Stage {
                    embed: Conv2d::new(b, "embed", cin, c, embed_geometry(s)),
                    embed_norm: LayerNorm::new(b, "embed_norm", c),
                    blocks: (0..cfg.stage_depths[s])
                        .map(|i| {
                            Block::new(
                                b,
                                &format!("block{i}"),
                                c,
                                cfg.stage_heads[s],
                                cfg.reduction_ratios[s],
                                cfg.mlp_hidden(s),
                            )
                        })
                        .collect(),
                    norm: LayerNorm::new(b, "norm", c),
                });
                stages.push(stage);
                cin = c;
            }
        });
        Self { stages }
    }

    /// Total input stride of the deepest stage.
    pub fn stride(&self) -> usize {
        2usize.pow(self.stages.len() as u32 + 1)
    }

    /// Encodes a `[H, W, 3]` image into one feature map per stage.
    pub fn encode_pyramid(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        image: Var,
    ) -> Result<FeaturePyramid> {
        let shape = tape.shape(image).to_vec();
        let stride = self.stride();
        if shape.len() != 3 || shape[2] != 3 {
            return Err(Error::Shape(format!(
                "expected an [H, W, 3] image, got {shape:?}"
            )));
        }
        if shape[0] == 0
            || shape[1] == 0
            || !shape[0].is_multiple_of(stride)
            || !shape[1].is_multiple_of(stride)
        {
            return Err(Error::Shape(format!(
                "image size {}x{} is not divisible by {stride}",
                shape[0], shape[1]
            )));
        }
        let mut x = image;
        let mut out = Vec::with_capacity(self.stages.len());
        for stage in &self.stages {
            x = stage.embed.forward(tape, store, x);
            let s = tape.shape(x).to_vec();
            let (h, w, c) = (s[0], s[1], s[2]);
            x = stage.embed_norm.forward(tape, store, x);
            let mut t = tape.reshape(x, [h * w, c]);
            for block in &stage.blocks {
                t = block.forward(tape, store, t, h, w)?;
            }
            t = stage.norm.forward(tape, store, t);
            x = tape.reshape(t, [h, w, c]);
            out.push(x);
        }
        Ok(out)
    }

    /// Runs both images through the same weights.
    pub fn siamese_encode(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        ng: Var,
        ok: Var,
    ) -> Result<(FeaturePyramid, FeaturePyramid)> {
        let (a, b) = (tape.shape(ng).to_vec(), tape.shape(ok).to_vec());
        if a != b {
            return Err(Error::Shape(format!(
                "NG image {a:?} and OK image {b:?} differ in size"
            )));
        }
        let p_ng = self.encode_pyramid(tape, store, ng)?;
        let p_ok = self.encode_pyramid(tape, store, ok)?;
        Ok((p_ng, p_ok))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use siamdefect_grad::Tensor;

    #[test]
    fn window_order_groups_windows() {
        // 4x4 grid, 2x2 windows: the first group is the top-left window.
        let idx = window_order(4, 4, 2);
        assert_eq!(&idx[..4], &[0, 1, 4, 5]);
        assert_eq!(&idx[4..8], &[2, 3, 6, 7]);
        let mut sorted = idx.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, (0..16).collect::<Vec<_>>());
    }

    fn sra(c: usize, heads: usize, ratio: usize) -> (ParamStore, SraWeights) {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let w = SraWeights::new(
            &mut Builder::new(&mut store, &mut rng),
            "attn",
            c,
            heads,
            ratio,
        );
        (store, w)
    }

    #[test]
    fn reduced_sequence_length() {
        let (store, w) = sra(32, 1, 8);
        let mut tape = Tape::inference();
        let x = tape.constant(Tensor::from_fn([4096, 32], |i| {
            ((i % 97) as f64 * 0.01).sin()
        }));
        let out = sra_attention(&mut tape, &store, &w, x, x).unwrap();
        assert_eq!(tape.shape(out), &[4096, 32]);
        // The widest score matrix on the tape is N x N/R.
        assert!((0..tape.len()).any(|i| tape.shape(Var::from_index(i)) == [4096, 512]));
    }

    #[test]
    fn rejects_indivisible_length_and_channel_mismatch() {
        let (store, w) = sra(4, 1, 3);
        let mut tape = Tape::inference();
        let x = tape.constant(Tensor::zeros([8, 4]));
        assert!(matches!(
            sra_attention(&mut tape, &store, &w, x, x),
            Err(Error::Shape(_))
        ));
        let (store, w) = sra(4, 1, 1);
        let y = tape.constant(Tensor::zeros([8, 2]));
        assert!(matches!(
            sra_attention(&mut tape, &store, &w, x, y),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn pyramid_shapes_for_small_input() {
        let cfg = ModelConfig::default();
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let enc = Encoder::new(&mut Builder::new(&mut store, &mut rng), &cfg, 4);
        let mut tape = Tape::inference();
        let img = tape.constant(Tensor::zeros([64, 64, 3]));
        let p = enc.encode_pyramid(&mut tape, &store, img).unwrap();
        let shapes: Vec<_> = p.iter().map(|&v| tape.shape(v).to_vec()).collect();
        assert_eq!(
            shapes,
            vec![
                vec![16, 16, 32],
                vec![8, 8, 64],
                vec![4, 4, 160],
                vec![2, 2, 256]
            ]
        );
        assert!(p.iter().all(|&v| tape.value(v).all_finite()));
    }

    #[test]
    fn rejects_bad_sizes() {
        let cfg = ModelConfig::default();
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let enc = Encoder::new(&mut Builder::new(&mut store, &mut rng), &cfg, 4);
        let mut tape = Tape::inference();
        let a = tape.constant(Tensor::zeros([48, 64, 3]));
        assert!(enc.encode_pyramid(&mut tape, &store, a).is_err());
        let a = tape.constant(Tensor::zeros([64, 64, 3]));
        let b = tape.constant(Tensor::zeros([32, 32, 3]));
        assert!(enc.siamese_encode(&mut tape, &store, a, b).is_err());
    }
}
