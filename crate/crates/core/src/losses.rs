//! Cross-entropy, contrastive and balanced contrastive losses.
//!
//! The contrastive terms act on the distance map: background pixels are
//! pulled below `tau_ok`, defect pixels pushed above `tau_ng`. Balanced
//! weighting scales each defect pixel by `B_p = (sum_q n_q) / n_p` where the
//! counts run over defect classes of the current batch only.

use std::collections::BTreeMap;

use siamdefect_grad::{Tape, Tensor, Var};

use crate::config::{ContrastiveMode, DecoderMode, LossConfig};
use crate::error::{Error, Result};
use crate::image::LabelMask;

/// Contrastive penalty of one pixel at distance `d`.
pub fn contrastive_pointwise(d: f64, changed: bool, cfg: &LossConfig) -> f64 {
    if changed {
        (cfg.tau_ng - d).max(0.0)
    } else if cfg.clamp_unchanged_at_zero {
        (d - cfg.tau_ok).max(0.0)
    } else {
        d - cfg.tau_ok
    }
}

/// Derivative of [`contrastive_pointwise`] with respect to `d`.
/// Hinge kinks take the zero side.
fn contrastive_slope(d: f64, changed: bool, cfg: &LossConfig) -> f64 {
    if changed {
        if d < cfg.tau_ng {
            -1.0
        } else {
            0.0
        }
    } else if !cfg.clamp_unchanged_at_zero || d > cfg.tau_ok {
        1.0
    } else {
        0.0
    }
}

/// Inverse-frequency weights of the defect classes present in a batch.
#[derive(Debug, Clone, PartialEq)]
pub struct BalanceFactors {
    pub per_class: BTreeMap<u8, f64>,
}

impl BalanceFactors {
    /// From per-class pixel counts indexed by class id; index 0 is
    /// background and ignored. `None` when no defect pixel is present.
    pub fn from_counts(counts: &[usize]) -> Option<Self> {
        let total: usize = counts.iter().skip(1).sum();
        if total == 0 {
            return None;
        }
        let per_class = counts
            .iter()
            .enumerate()
            .skip(1)
            .filter(|&(_, &n)| n > 0)
            .map(|(c, &n)| (c as u8, total as f64 / n as f64))
            .collect();
        Some(Self { per_class })
    }

    pub fn from_masks<'a>(masks: impl IntoIterator<Item = &'a LabelMask>) -> Option<Self> {
        Self::from_counts(&class_counts(masks))
    }

    pub fn get(&self, class: u8) -> Option<f64> {
        self.per_class.get(&class).copied()
    }
}

/// Pixel count of every class id, indexed by id.
pub fn class_counts<'a>(masks: impl IntoIterator<Item = &'a LabelMask>) -> Vec<usize> {
    let mut counts = vec![0usize; 256];
    for m in masks {
        for &v in m.data() {
            counts[v as usize] += 1;
        }
    }
    let used = counts.iter().rposition(|&n| n > 0).map_or(1, |i| i + 1);
    counts.truncate(used.max(1));
    counts
}

/// Per-pixel weights: 1 for background, `B_y` (balanced) or 1 (plain) for
/// defect pixels.
pub fn pixel_weights(
    label: &LabelMask,
    factors: Option<&BalanceFactors>,
    mode: ContrastiveMode,
) -> Vec<f64> {
    label
        .data()
        .iter()
        .map(|&y| match (y, mode, factors) {
            (0, _, _) => 1.0,
            (_, ContrastiveMode::Balanced, Some(f)) => f.get(y).unwrap_or(1.0),
            _ => 1.0,
        })
        .collect()
}

/// `sum_p w(p) * CL(d(p), y(p) > 0)` as a scalar node. `d` is `[h, w, 1]`
/// and `label` must already be at that resolution.
pub fn weighted_contrastive_sum(
    tape: &mut Tape,
    d: Var,
    label: &LabelMask,
    weights: &[f64],
    cfg: &LossConfig,
) -> Result<Var> {
    let s = tape.shape(d).to_vec();
    if s.len() != 3 || s[2] != 1 || s[0] != label.height() || s[1] != label.width() {
        return Err(Error::Shape(format!(
            "distance map {s:?} does not match a {}x{} label",
            label.height(),
            label.width()
        )));
    }
    assert_eq!(weights.len(), label.data().len());
    let changed: Vec<bool> = label.data().iter().map(|&y| y > 0).collect();
    let dv = tape.value(d);
    let total: f64 = dv
        .data()
        .iter()
        .zip(&changed)
        .zip(weights)
        .map(|((&d, &c), &w)| w * contrastive_pointwise(d, c, cfg))
        .sum();
    let cfg = cfg.clone();
    let weights = weights.to_vec();
    Ok(tape.custom(
        &[d],
        Tensor::scalar(total),
        Box::new(move |g, p, _| {
            let g = g.item();
            let data = p[0]
                .data()
                .iter()
                .zip(&changed)
                .zip(&weights)
                .map(|((&d, &c), &w)| g * w * contrastive_slope(d, c, &cfg))
                .collect();
            vec![Some(Tensor::new(p[0].shape().to_vec(), data))]
        }),
    ))
}

/// Balanced contrastive loss of one map: the weighted mean over pixels.
pub fn balanced_contrastive_loss(
    tape: &mut Tape,
    d: Var,
    label: &LabelMask,
    cfg: &LossConfig,
) -> Result<Var> {
    let label = align_label(label, tape.shape(d)[1], tape.shape(d)[0]);
    let factors = BalanceFactors::from_masks([&label]);
    let w = pixel_weights(&label, factors.as_ref(), cfg.contrastive);
    let s = weighted_contrastive_sum(tape, d, &label, &w, cfg)?;
    Ok(tape.scale(s, 1.0 / label.data().len() as f64))
}

/// Plain-value balanced contrastive loss, for evaluation and oracles.
pub fn balanced_contrastive_value(d: &Tensor, label: &LabelMask, cfg: &LossConfig) -> f64 {
    let factors = BalanceFactors::from_masks([label]);
    let w = pixel_weights(label, factors.as_ref(), cfg.contrastive);
    let sum: f64 = d
        .data()
        .iter()
        .zip(label.data())
        .zip(&w)
        .map(|((&d, &y), &w)| w * contrastive_pointwise(d, y > 0, cfg))
        .sum();
    sum / label.data().len() as f64
}

/// Nearest-neighbour resize of a label to a `width x height` grid.
pub fn align_label(label: &LabelMask, width: usize, height: usize) -> LabelMask {
    label.resize_nearest(width, height)
}

/// `sum_p -log softmax(z_p)[y_p]` as a scalar node; `logits` is `[H, W, C]`.
pub fn cross_entropy_sum(tape: &mut Tape, logits: Var, label: &LabelMask) -> Result<Var> {
    let s = tape.shape(logits).to_vec();
    if s.len() != 3 || s[0] != label.height() || s[1] != label.width() {
        return Err(Error::Shape(format!(
            "logits {s:?} do not match a {}x{} label",
            label.height(),
            label.width()
        )));
    }
    let c = s[2];
    if let Some(&bad) = label.data().iter().find(|&&y| y as usize >= c) {
        return Err(Error::InvalidInput(format!(
            "label value {bad} is outside [0, {c})"
        )));
    }
    let zv = tape.value(logits);
    let mut probs = Vec::with_capacity(zv.numel());
    let mut total = 0.0;
    for (row, &y) in zv.data().chunks(c).zip(label.data()) {
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = row.iter().map(|v| (v - m).exp()).sum();
        let lse = m + sum.ln();
        total += lse - row[y as usize];
        probs.extend(row.iter().map(|v| (v - lse).exp()));
    }
    let ys: Vec<u8> = label.data().to_vec();
    Ok(tape.custom(
        &[logits],
        Tensor::scalar(total),
        Box::new(move |g, p, _| {
            let g = g.item();
            let mut d = probs.clone();
            for (row, &y) in d.chunks_mut(c).zip(&ys) {
                row[y as usize] -= 1.0;
                for v in row.iter_mut() {
                    *v *= g;
                }
            }
            vec![Some(Tensor::new(p[0].shape().to_vec(), d))]
        }),
    ))
}

/// Mean per-pixel cross-entropy.
pub fn cross_entropy_loss(tape: &mut Tape, logits: Var, label: &LabelMask) -> Result<Var> {
    let s = cross_entropy_sum(tape, logits, label)?;
    Ok(tape.scale(s, 1.0 / label.data().len() as f64))
}

/// Loss components of one step.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossBreakdown {
    pub cel: f64,
    pub bcl: f64,
    pub total: f64,
}

/// Weights of the cross-entropy and contrastive terms under `mode`.
pub fn loss_weights(mode: DecoderMode, cfg: &LossConfig) -> (f64, f64) {
    let contrastive_on = cfg.contrastive != ContrastiveMode::Off;
    match mode {
        DecoderMode::IntraClass => (cfg.lambda1, if contrastive_on { cfg.lambda2 } else { 0.0 }),
        DecoderMode::OutOfClass => (0.0, 1.0),
    }
}

/// Combines component values: `l1 * cel + l2 * bcl` intra-class, `bcl`
/// out-of-class.
pub fn total_loss(cel: f64, bcl: f64, mode: DecoderMode, cfg: &LossConfig) -> LossBreakdown {
    let (a, b) = loss_weights(mode, cfg);
    LossBreakdown {
        cel,
        bcl,
        total: a * cel + b * bcl,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> LossConfig {
        LossConfig::default()
    }

    #[test]
    fn pointwise_values() {
        let c = cfg();
        assert_eq!(contrastive_pointwise(0.3, false, &c), 0.0);
        assert_eq!(contrastive_pointwise(0.0, true, &c), 2.2);
        assert_eq!(contrastive_pointwise(3.0, true, &c), 0.0);
        assert_eq!(contrastive_pointwise(0.0, false, &c), 0.0);
        let raw = LossConfig {
            clamp_unchanged_at_zero: false,
            ..c
        };
        assert!((contrastive_pointwise(0.0, false, &raw) + 0.3).abs() < 1e-15);
    }

    #[test]
    fn balance_factor_examples() {
        let f = BalanceFactors::from_counts(&[0, 300, 100]).unwrap();
        assert_eq!(f.get(1), Some(4.0 / 3.0));
        assert_eq!(f.get(2), Some(4.0));
        let f = BalanceFactors::from_counts(&[10, 200]).unwrap();
        assert_eq!(f.get(1), Some(1.0));
        let f = BalanceFactors::from_counts(&[7, 50, 50]).unwrap();
        assert_eq!((f.get(1), f.get(2)), (Some(2.0), Some(2.0)));
        assert!(BalanceFactors::from_counts(&[1000]).is_none());
        assert!(BalanceFactors::from_counts(&[1000, 0, 0]).is_none());
    }

    #[test]
    fn bcl_hand_example() {
        let label = LabelMask::new(2, 2, vec![0, 0, 1, 2]);
        let d = Tensor::zeros([2, 2, 1]);
        let v = balanced_contrastive_value(&d, &label, &cfg());
        assert!((v - 2.2).abs() < 1e-12, "{v}");
        let mut tape = Tape::inference();
        let dv = tape.constant(d);
        let t = balanced_contrastive_loss(&mut tape, dv, &label, &cfg()).unwrap();
        assert!((tape.value(t).item() - 2.2).abs() < 1e-12);
    }

    #[test]
    fn bcl_zero_when_unchanged_at_threshold() {
        let label = LabelMask::zeros(4, 4);
        let d = Tensor::full([4, 4, 1], 0.3);
        assert_eq!(balanced_contrastive_value(&d, &label, &cfg()), 0.0);
    }

    #[test]
    fn cross_entropy_examples() {
        let label = LabelMask::new(1, 1, vec![0]);
        let mut tape = Tape::inference();
        let z = tape.constant(Tensor::zeros([1, 1, 2]));
        let l = cross_entropy_loss(&mut tape, z, &label).unwrap();
        assert!((tape.value(l).item() - std::f64::consts::LN_2).abs() < 1e-12);
        let z = tape.constant(Tensor::new([1, 1, 3], vec![20.0, 0.0, 0.0]));
        let l = cross_entropy_loss(&mut tape, z, &label).unwrap();
        assert!(tape.value(l).item() < 1e-8);
        let bad = LabelMask::new(1, 1, vec![3]);
        assert!(matches!(
            cross_entropy_loss(&mut tape, z, &bad),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn total_loss_switch() {
        let c = cfg();
        assert!((total_loss(0.5, 0.3, DecoderMode::IntraClass, &c).total - 0.8).abs() < 1e-15);
        assert_eq!(total_loss(9.0, 0.3, DecoderMode::OutOfClass, &c).total, 0.3);
        let c2 = LossConfig { lambda2: 0.0, ..c };
        assert_eq!(
            total_loss(0.5, 0.3, DecoderMode::IntraClass, &c2).total,
            0.5
        );
    }
}
