//! Change-aware decoder.
//!
//! Three sigmoid gates (channel, horizontal, vertical) re-weight the fused
//! difference features. In intra-class mode the distance map is added to
//! the features first; in out-of-class mode the normalised distance map
//! replaces the two spatial gates and multiplies the features directly.
//! A pointwise fuse layer precedes the gates and a pointwise classifier
//! follows them.

use rand::Rng;
use siamdefect_grad::{ParamStore, Tape, Tensor, Var};

use crate::config::{DecoderMode, ModelConfig};
use crate::error::{Error, Result};
use crate::nn::{Builder, Linear};

/// Guard added to the range in min-max normalisation.
pub const NORM_EPS: f64 = 1e-6;

/// Min-max normalisation of a distance map over the whole map:
/// `(d - min) / (max - min + eps)`. Differentiable, including through the
/// extrema (first occurrence wins ties).
pub fn normalize_distmap(tape: &mut Tape, d: Var) -> Var {
    let dv = tape.value(d);
    let data = dv.data();
    let (mut imin, mut imax) = (0, 0);
    for (i, &v) in data.iter().enumerate() {
        if v < data[imin] {
            imin = i;
        }
        if v > data[imax] {
            imax = i;
        }
    }
    let (lo, hi) = (data[imin], data[imax]);
    let s = hi - lo + NORM_EPS;
    let value = dv.map(|v| (v - lo) / s);
    tape.custom(
        &[d],
        value,
        Box::new(move |g, _, y| {
            let mut gd = g.scale(1.0 / s);
            let (mut g_lo, mut g_hi) = (0.0, 0.0);
            for (&gi, &yi) in g.data().iter().zip(y.data()) {
                g_lo += gi * (yi - 1.0) / s;
                g_hi -= gi * yi / s;
            }
            gd.data_mut()[imin] += g_lo;
            gd.data_mut()[imax] += g_hi;
            vec![Some(gd)]
        }),
    )
}

/// Plain-value form of [`normalize_distmap`].
pub fn normalize_values(d: &Tensor) -> Tensor {
    let lo = d.data().iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = d.data().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let s = hi - lo + NORM_EPS;
    d.map(|v| (v - lo) / s)
}

/// Gate weights produced for one input, kept for inspection.
pub struct Gates {
    /// `[1, 1, D]`
    pub channel: Var,
    /// `[1, W, D]`, absent in out-of-class mode.
    pub horizontal: Option<Var>,
    /// `[H, 1, D]`, absent in out-of-class mode.
    pub vertical: Option<Var>,
}

#[derive(Debug, Clone)]
pub struct ChangeAttention {
    pub channel_fc1: Linear,
    pub channel_fc2: Linear,
    pub coord_shared: Linear,
    pub coord_h: Linear,
    pub coord_v: Linear,
}

impl ChangeAttention {
    pub fn new<R: Rng>(b: &mut Builder<'_, R>, channels: usize, bottleneck: usize) -> Self {
        b.scoped("cad", |b| Self {
            channel_fc1: Linear::new(b, "channel_fc1", channels, bottleneck, true),
            channel_fc2: Linear::new(b, "channel_fc2", bottleneck, channels, true),
            coord_shared: Linear::new(b, "coord_shared", channels, bottleneck, true),
            coord_h: Linear::new(b, "coord_h", bottleneck, channels, true),
            coord_v: Linear::new(b, "coord_v", bottleneck, channels, true),
        })
    }

    /// Global-pool channel gate, `[1, 1, D]`.
    pub fn channel_gate(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Var {
        let d = tape.shape(x)[2];
        let pooled = tape.mean_to(x, [1, 1, d]);
        let pooled = tape.reshape(pooled, [1, d]);
        let z = self.channel_fc1.forward(tape, store, pooled);
        let z = tape.relu(z);
        let z = self.channel_fc2.forward(tape, store, z);
        let z = tape.sigmoid(z);
        tape.reshape(z, [1, 1, d])
    }

    /// Column profile gate `[1, W, D]` and row profile gate `[H, 1, D]`.
    pub fn spatial_gates(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> (Var, Var) {
        let s = tape.shape(x).to_vec();
        let (h, w, d) = (s[0], s[1], s[2]);
        let cols = tape.mean_to(x, [1, w, d]);
        let cols = tape.reshape(cols, [w, d]);
        let rows = tape.mean_to(x, [h, 1, d]);
        let rows = tape.reshape(rows, [h, d]);
        let zc = self.coord_shared.forward(tape, store, cols);
        let zc = tape.relu(zc);
        let zr = self.coord_shared.forward(tape, store, rows);
        let zr = tape.relu(zr);
        let gh = self.coord_h.forward(tape, store, zc);
        let gh = tape.sigmoid(gh);
        let gv = self.coord_v.forward(tape, store, zr);
        let gv = tape.sigmoid(gv);
        (tape.reshape(gh, [1, w, d]), tape.reshape(gv, [h, 1, d]))
    }

    /// Applies the gates to `x` (`[H, W, D]`) given a `[H, W, 1]` distance map.
    pub fn forward(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        x: Var,
        dist: Var,
        mode: DecoderMode,
    ) -> Result<(Var, Gates)> {
        let (xs, ds) = (tape.shape(x).to_vec(), tape.shape(dist).to_vec());
        if xs.len() != 3 || ds != [xs[0], xs[1], 1] {
            return Err(Error::Shape(format!(
                "distance map {ds:?} is not aligned with features {xs:?}"
            )));
        }
        match mode {
            DecoderMode::IntraClass => {
                let x = tape.add_broadcast(x, dist);
                let ca = self.channel_gate(tape, store, x);
                let (ha, va) = self.spatial_gates(tape, store, x);
                let y = tape.mul_broadcast(x, ca);
                let y = tape.mul_broadcast(y, ha);
                let y = tape.mul_broadcast(y, va);
                Ok((
                    y,
                    Gates {
                        channel: ca,
                        horizontal: Some(ha),
                        vertical: Some(va),
                    },
                ))
            }
            DecoderMode::OutOfClass => {
                let ca = self.channel_gate(tape, store, x);
                let nd = normalize_distmap(tape, dist);
                let y = tape.mul_broadcast(x, ca);
                let y = tape.mul_broadcast(y, nd);
                Ok((
                    y,
                    Gates {
                        channel: ca,
                        horizontal: None,
                        vertical: None,
                    },
                ))
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct Decoder {
    /// Pointwise mixing of the fused differences, followed by ReLU.
    pub fuse: Linear,
    pub attention: Option<ChangeAttention>,
    pub head: Linear,
    pub mode: DecoderMode,
}

impl Decoder {
    pub fn new<R: Rng>(b: &mut Builder<'_, R>, cfg: &ModelConfig) -> Self {
        let d = cfg.decoder_channels;
        b.scoped("decoder", |b| Self {
            fuse: Linear::new(b, "fuse", d, d, true),
            attention: cfg
                .cad
                .then(|| ChangeAttention::new(b, d, cfg.attention_bottleneck())),
            head: Linear::new(b, "head", d, cfg.num_classes, true),
            mode: cfg.mode,
        })
    }

    /// Per-class logits `[H, W, num_classes]` on the fused grid.
    pub fn decode(&self, tape: &mut Tape, store: &ParamStore, x: Var, dist: Var) -> Result<Var> {
        let (xs, ds) = (tape.shape(x).to_vec(), tape.shape(dist).to_vec());
        if xs.len() != 3 || ds != [xs[0], xs[1], 1] {
            return Err(Error::Shape(format!(
                "distance map {ds:?} is not aligned with features {xs:?}"
            )));
        }
        let x = self.fuse.forward(tape, store, x);
        let x = tape.relu(x);
        let y = match &self.attention {
            Some(att) => att.forward(tape, store, x, dist, self.mode)?.0,
            None => x,
        };
        Ok(self.head.forward(tape, store, y))
    }
}
