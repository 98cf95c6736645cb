//! Cross-branch fusion: aligned concatenation, the distance map, and the
//! projected sum of per-stage feature differences.

use rand::Rng;
use siamdefect_grad::{ParamStore, Tape, Var};

use crate::config::ModelConfig;
use crate::encoder::FeaturePyramid;
use crate::error::{Error, Result};
use crate::nn::{Builder, Linear};

/// Upsamples every stage to the first stage's grid and concatenates the
/// channels in stage order. Output is `[h1, w1, sum C]`.
pub fn align_concat(tape: &mut Tape, pyramid: &[Var]) -> Var {
    let s0 = tape.shape(pyramid[0]).to_vec();
    let (h, w) = (s0[0], s0[1]);
    let parts: Vec<Var> = pyramid
        .iter()
        .map(|&f| {
            let up = tape.resize_bilinear(f, h, w);
            let c = tape.shape(up)[2];
            tape.reshape(up, [h * w, c])
        })
        .collect();
    let cat = tape.concat_cols(&parts);
    let total = tape.shape(cat)[1];
    tape.reshape(cat, [h, w, total])
}

/// Per-pixel Euclidean distance between two `[h, w, C]` maps, as `[h, w, 1]`.
pub fn dist_map(tape: &mut Tape, f_ng: Var, f_ok: Var) -> Result<Var> {
    let (a, b) = (tape.shape(f_ng).to_vec(), tape.shape(f_ok).to_vec());
    if a != b || a.len() != 3 {
        return Err(Error::Shape(format!(
            "distance map needs equal [H, W, C] maps, got {a:?} and {b:?}"
        )));
    }
    let d = tape.sub(f_ng, f_ok);
    Ok(tape.row_l2_norm(d))
}

/// One projection per encoder stage into the decoder width.
#[derive(Debug, Clone)]
pub struct Fusion {
    pub projections: Vec<Linear>,
    pub channels: usize,
}

impl Fusion {
    pub fn new<R: Rng>(b: &mut Builder<'_, R>, cfg: &ModelConfig, num_stages: usize) -> Self {
        let d = cfg.decoder_channels;
        b.scoped("fusion", |b| Self {
            projections: (0..num_stages)
                .map(|s| Linear::new(b, &format!("proj{s}"), cfg.stage_channels[s], d, true))
                .collect(),
            channels: d,
        })
    }

    /// `sum_n up(W_n (f_ng^n - f_ok^n) + b_n)` on the first stage's grid.
    pub fn fuse_differences(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        p_ng: &FeaturePyramid,
        p_ok: &FeaturePyramid,
    ) -> Result<Var> {
        if p_ng.len() != self.projections.len() || p_ok.len() != self.projections.len() {
            return Err(Error::Shape(format!(
                "fusion expects {} stages, got {} and {}",
                self.projections.len(),
                p_ng.len(),
                p_ok.len()
            )));
        }
        let s0 = tape.shape(p_ng[0]).to_vec();
        let (h, w) = (s0[0], s0[1]);
        let mut acc: Option<Var> = None;
        for ((&a, &b), proj) in p_ng.iter().zip(p_ok).zip(&self.projections) {
            if tape.shape(a) != tape.shape(b) {
                return Err(Error::Shape(format!(
                    "stage maps differ: {:?} vs {:?}",
                    tape.shape(a),
                    tape.shape(b)
                )));
            }
            let diff = tape.sub(a, b);
            let y = proj.forward(tape, store, diff);
            let y = tape.resize_bilinear(y, h, w);
            acc = Some(match acc {
                Some(s) => tape.add(s, y),
                None => y,
            });
        }
        Ok(acc.expect("at least one stage"))
    }
}
