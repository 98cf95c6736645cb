//! Optimisation loop, evaluation protocols and run state.

use std::collections::BTreeSet;
use std::fmt;
use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use siamdefect_grad::{Tape, Tensor};

use crate::checkpoint::Checkpoint;
use crate::config::{Config, CrossClassSplit, DecoderMode, Protocol};
use crate::data::{
    augment, make_split, to_tensor, transform_pair, AugmentParams, ImagePair, Sample,
};
use crate::decoder::normalize_values;
use crate::error::{Error, Result};
use crate::image::LabelMask;
use crate::losses::{
    align_label, cross_entropy_loss, loss_weights, pixel_weights, weighted_contrastive_sum,
    BalanceFactors, LossBreakdown,
};
use crate::metrics::{
    best_fscore, best_iou, pr_ft_curves, scores, uniform_thresholds, ConfusionMatrix, CurvePoint,
    Scores, DEFAULT_CURVE_LEVELS,
};
use crate::model::Model;
use crate::optim::{learning_rate, AdamW};
use crate::synlcd::defects::{CLASS_ABPT, CLASS_LINE};
use crate::synlcd::mix_seed;

/// Header of the loss log.
pub const LOSS_LOG_HEADER: &str = "step,cel,bcl,total";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ProtocolName {
    Full,
    LL,
    AA,
    LA,
    AL,
    LabelFraction,
}

impl fmt::Display for ProtocolName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Self::Full => "full",
            Self::LL => "LL",
            Self::AA => "AA",
            Self::LA => "LA",
            Self::AL => "AL",
            Self::LabelFraction => "label_fraction",
        };
        f.write_str(s)
    }
}

/// Which defect classes a run trains and tests on. Background (0) is
/// implicit in both sets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtocolSpec {
    pub name: ProtocolName,
    pub train_classes: BTreeSet<u8>,
    pub test_classes: BTreeSet<u8>,
    pub fraction: f64,
}

impl ProtocolSpec {
    pub fn from_config(cfg: &Config) -> Self {
        let all: BTreeSet<u8> = (1..cfg.model.num_classes as u8).collect();
        let one = |c: u8| BTreeSet::from([c]);
        let (name, train, test) = match cfg.train.protocol {
            Protocol::Full => (ProtocolName::Full, all.clone(), all),
            Protocol::LabelFraction => (ProtocolName::LabelFraction, all.clone(), all),
            Protocol::CrossClass => match cfg.train.cross_class {
                CrossClassSplit::Ll => (ProtocolName::LL, one(CLASS_LINE), one(CLASS_LINE)),
                CrossClassSplit::Aa => (ProtocolName::AA, one(CLASS_ABPT), one(CLASS_ABPT)),
                CrossClassSplit::La => (ProtocolName::LA, one(CLASS_LINE), one(CLASS_ABPT)),
                CrossClassSplit::Al => (ProtocolName::AL, one(CLASS_ABPT), one(CLASS_LINE)),
            },
        };
        let fraction = match cfg.train.protocol {
            Protocol::LabelFraction => cfg.train.label_fraction,
            _ => 1.0,
        };
        Self {
            name,
            train_classes: train,
            test_classes: test,
            fraction,
        }
    }

    pub fn is_out_of_class(&self) -> bool {
        self.train_classes.is_disjoint(&self.test_classes)
    }

    pub fn mode(&self) -> DecoderMode {
        if self.is_out_of_class() {
            DecoderMode::OutOfClass
        } else {
            DecoderMode::IntraClass
        }
    }

    fn admits(classes: &BTreeSet<u8>, mask: &LabelMask) -> bool {
        mask.classes()
            .iter()
            .all(|c| *c == 0 || classes.contains(c))
    }

    /// Training pairs: those whose labels only use training classes, reduced
    /// to the labeled subset under the label-fraction protocol.
    pub fn training_pairs(&self, pairs: &[ImagePair], seed: u64) -> Result<Vec<ImagePair>> {
        let kept: Vec<&ImagePair> = pairs
            .iter()
            .filter(|p| Self::admits(&self.train_classes, &p.mask))
            .collect();
        let ids: Vec<usize> = (0..kept.len()).collect();
        let plan = make_split(&ids, self.fraction, seed)?;
        let out: Vec<ImagePair> = plan.labeled.iter().map(|&i| kept[i].clone()).collect();
        if out.is_empty() {
            return Err(Error::Dataset(format!(
                "protocol {} leaves no labeled training pairs out of {}",
                self.name,
                pairs.len()
            )));
        }
        Ok(out)
    }

    /// Test pairs whose labels only use test classes.
    pub fn test_pairs(&self, pairs: &[ImagePair]) -> Vec<ImagePair> {
        pairs
            .iter()
            .filter(|p| Self::admits(&self.test_classes, &p.mask))
            .cloned()
            .collect()
    }
}

/// Loss components after one step, averaged over the batch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    /// One-based index of the completed step.
    pub step: usize,
    pub cel: f64,
    pub bcl: f64,
    pub total: f64,
}

impl LossRecord {
    pub fn csv_line(&self) -> String {
        format!("{},{},{},{}", self.step, self.cel, self.bcl, self.total)
    }
}

/// Training state: configuration, weights, optimizer moments, step count.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub config: Config,
    pub model: Model,
    pub optimizer: AdamW,
    pub iteration: usize,
}

impl Trainer {
    pub fn new(config: Config) -> Result<Self> {
        let config = config.validate()?;
        let model = Model::new(&config.model, config.train.seed);
        let optimizer = AdamW::new(&model.store, config.train.weight_decay);
        Ok(Self {
            config,
            model,
            optimizer,
            iteration: 0,
        })
    }

    /// Starts from another run's weights with fresh optimizer state, e.g. a
    /// fine-tuning stage after pretraining.
    pub fn with_weights(config: Config, model: &Model) -> Result<Self> {
        let mut t = Self::new(config)?;
        if t.model.store.len() != model.store.len()
            || t.model
                .store
                .iter()
                .zip(model.store.iter())
                .any(|(a, b)| a.1 != b.1 || a.2.shape() != b.2.shape())
        {
            return Err(Error::InvalidInput(
                "initial weights do not match the model configuration".into(),
            ));
        }
        t.model.store = model.store.clone();
        Ok(t)
    }

    pub fn from_checkpoint(ck: Checkpoint) -> Self {
        Self {
            config: ck.config,
            model: ck.model,
            optimizer: ck.optimizer,
            iteration: ck.iteration,
        }
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            config: self.config.clone(),
            model: self.model.clone(),
            optimizer: self.optimizer.clone(),
            iteration: self.iteration,
        }
    }

    /// `train.head_lr_mult` for everything after the encoder, 1 inside it.
    pub fn lr_multipliers(&self) -> Vec<f64> {
        self.model
            .store
            .iter()
            .map(|(_, name, _)| {
                if name.starts_with("encoder.") {
                    1.0
                } else {
                    self.config.train.head_lr_mult
                }
            })
            .collect()
    }

    /// Dataset indices of the batch at zero-based `step`. Samples are drawn
    /// epoch by epoch from seeded permutations, so the order depends only
    /// on the seed and the step, never on how the run was interrupted.
    pub fn batch_indices(&self, step: usize, n: usize) -> Vec<usize> {
        let b = self.config.train.batch_size;
        let seed = self.config.train.seed;
        let mut cached: Option<(usize, Vec<usize>)> = None;
        (step * b..(step + 1) * b)
            .map(|k| {
                let epoch = k / n;
                if cached.as_ref().is_none_or(|(e, _)| *e != epoch) {
                    let mut perm: Vec<usize> = (0..n).collect();
                    perm.shuffle(&mut ChaCha8Rng::seed_from_u64(mix_seed(
                        seed ^ mix_seed(epoch as u64),
                    )));
                    cached = Some((epoch, perm));
                }
                cached.as_ref().unwrap().1[k % n]
            })
            .collect()
    }

    /// Augmented, normalised batch for zero-based `step`.
    pub fn batch(&self, pairs: &[ImagePair], step: usize) -> Vec<Sample> {
        let t = &self.config.train;
        let [h, w] = t.input_size;
        self.batch_indices(step, pairs.len())
            .into_iter()
            .enumerate()
            .map(|(j, i)| {
                let k = (step * t.batch_size + j) as u64;
                let mut rng =
                    ChaCha8Rng::seed_from_u64(mix_seed(t.seed.rotate_left(17) ^ mix_seed(k)));
                let params = if t.augment {
                    AugmentParams::sample(w, h, &mut rng)
                } else {
                    AugmentParams::identity(w, h)
                };
                augment(&pairs[i], t.input_size, &params, &t.norm_mean, &t.norm_std)
            })
            .collect()
    }

    /// Batch-averaged loss and its gradient with respect to every
    /// parameter (`None` where the loss does not depend on it).
    pub fn gradients(&self, batch: &[Sample]) -> Result<(LossBreakdown, Vec<Option<Tensor>>)> {
        let mode = self.model.mode();
        let (l1, l2) = loss_weights(mode, &self.config.loss);
        let b = batch.len() as f64;
        let mut grads: Vec<Option<Tensor>> = vec![None; self.model.store.len()];
        let mut tapes = Vec::with_capacity(batch.len());
        let mut aligned = Vec::with_capacity(batch.len());
        // Balance factors are shared by the whole batch, so the forward
        // passes come first.
        for s in batch {
            let mut tape = Tape::new();
            let ng = tape.constant(s.ng.clone());
            let ok = tape.constant(s.ok.clone());
            let f = self.model.forward(&mut tape, ng, ok)?;
            let ds = tape.shape(f.dist).to_vec();
            aligned.push(align_label(&s.mask, ds[1], ds[0]));
            tapes.push((tape, f));
        }
        let factors = BalanceFactors::from_masks(aligned.iter());
        let (mut cel_sum, mut bcl_sum) = (0.0, 0.0);
        for ((mut tape, f), (s, label)) in tapes.into_iter().zip(batch.iter().zip(&aligned)) {
            let cel = cross_entropy_loss(&mut tape, f.logits, &s.mask)?;
            let w = pixel_weights(label, factors.as_ref(), self.config.loss.contrastive);
            let bsum = weighted_contrastive_sum(&mut tape, f.dist, label, &w, &self.config.loss)?;
            let bcl = tape.scale(bsum, 1.0 / label.data().len() as f64);
            cel_sum += tape.value(cel).item();
            bcl_sum += tape.value(bcl).item();
            let root = match (l1 > 0.0, l2 > 0.0) {
                (true, true) => {
                    let a = tape.scale(cel, l1 / b);
                    let c = tape.scale(bcl, l2 / b);
                    tape.add(a, c)
                }
                (true, false) => tape.scale(cel, l1 / b),
                (false, true) => tape.scale(bcl, l2 / b),
                (false, false) => continue,
            };
            let g = tape.backward(root);
            for (id, t) in g.params() {
                match &mut grads[id.0] {
                    Some(acc) => acc.add_assign(t),
                    slot => *slot = Some(t.clone()),
                }
            }
        }
        let loss = LossBreakdown {
            cel: cel_sum / b,
            bcl: bcl_sum / b,
            total: (l1 * cel_sum + l2 * bcl_sum) / b,
        };
        Ok((loss, grads))
    }

    /// Forward, loss and backward over a batch, then one optimizer update.
    pub fn step(&mut self, batch: &[Sample]) -> Result<LossRecord> {
        let (loss, grads) = self.gradients(batch)?;
        let rec = LossRecord {
            step: self.iteration + 1,
            cel: loss.cel,
            bcl: loss.bcl,
            total: loss.total,
        };
        if !(rec.cel.is_finite() && rec.bcl.is_finite() && rec.total.is_finite()) {
            return Err(Error::NonFiniteLoss {
                step: rec.step,
                cel: rec.cel,
                bcl: rec.bcl,
                total: rec.total,
            });
        }
        let t = &self.config.train;
        let lr = learning_rate(
            t.learning_rate,
            self.iteration,
            t.iterations,
            t.warmup_iters,
        );
        let mult = self.lr_multipliers();
        self.optimizer
            .step(&mut self.model.store, &grads, lr, &mult);
        self.iteration += 1;
        Ok(rec)
    }

    /// Trains until `train.iterations` steps are complete, calling
    /// `on_step` after each one.
    pub fn run(
        &mut self,
        pairs: &[ImagePair],
        mut on_step: impl FnMut(&LossRecord),
    ) -> Result<Vec<LossRecord>> {
        if pairs.is_empty() {
            return Err(Error::Dataset("no training pairs".into()));
        }
        let mut history = Vec::new();
        while self.iteration < self.config.train.iterations {
            let batch = self.batch(pairs, self.iteration);
            let rec = self.step(&batch)?;
            on_step(&rec);
            history.push(rec);
        }
        Ok(history)
    }
}

/// Writes a loss history as `step,cel,bcl,total` lines, header included.
pub fn write_loss_log(history: &[LossRecord], mut out: impl Write) -> std::io::Result<()> {
    writeln!(out, "{LOSS_LOG_HEADER}")?;
    for r in history {
        writeln!(out, "{}", r.csv_line())?;
    }
    Ok(())
}

/// Per-sample output of an evaluation.
#[derive(Debug, Clone)]
pub struct SamplePrediction {
    pub sample_id: String,
    pub pred: LabelMask,
    pub gt: LabelMask,
    /// Per-pixel defect probability in `[0, 1]`.
    pub prob: Vec<f64>,
}

/// Scores of a model over a test set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub protocol: String,
    pub mode: DecoderMode,
    pub samples: usize,
    pub confusion: ConfusionMatrix,
    pub scores: Scores,
    /// Defect-vs-background threshold used for the confusion matrix when
    /// predictions are binarised; absent for argmax prediction.
    pub threshold: Option<f64>,
    pub best_fscore: Option<CurvePoint>,
    pub best_iou: Option<CurvePoint>,
    /// Binary defect IoU at probability 0.5.
    pub iou_at_half: f64,
}

#[derive(Debug, Clone)]
pub struct Evaluation {
    pub report: EvalReport,
    pub curve: Vec<CurvePoint>,
    pub predictions: Vec<SamplePrediction>,
}

/// Defect probability from class logits: one minus the background softmax.
pub fn defect_probability(logits: &Tensor) -> Vec<f64> {
    let c = logits.shape()[2];
    logits
        .data()
        .chunks(c)
        .map(|z| {
            let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let s: f64 = z.iter().map(|v| (v - m).exp()).sum();
            1.0 - (z[0] - m).exp() / s
        })
        .collect()
}

/// Min-max normalised distance map, bilinearly resized to `h x w`.
pub fn distance_probability(dist: &Tensor, h: usize, w: usize) -> Vec<f64> {
    let mut tape = Tape::inference();
    let d = tape.constant(normalize_values(dist));
    let up = tape.resize_bilinear(d, h, w);
    tape.value(up)
        .data()
        .iter()
        .map(|v| v.clamp(0.0, 1.0))
        .collect()
}

pub fn argmax_mask(logits: &Tensor) -> LabelMask {
    let s = logits.shape();
    let data = logits
        .data()
        .chunks(s[2])
        .map(|z| {
            let mut best = 0;
            for (i, v) in z.iter().enumerate() {
                if *v > z[best] {
                    best = i;
                }
            }
            best as u8
        })
        .collect();
    LabelMask::new(s[1], s[0], data)
}

fn threshold_mask(prob: &[f64], w: usize, h: usize, t: f64) -> LabelMask {
    LabelMask::new(w, h, prob.iter().map(|&p| (p >= t) as u8).collect())
}

/// Scores `model` on `pairs` at the configured input size.
///
/// Intra-class models predict by argmax over classes. Out-of-class models
/// predict defect vs background from the normalised distance map,
/// binarised at the threshold with the best F-score over the whole set.
/// Both also get a defect-probability threshold sweep.
pub fn evaluate(
    model: &Model,
    pairs: &[ImagePair],
    protocol: &ProtocolSpec,
    cfg: &Config,
) -> Result<Evaluation> {
    let [h, w] = cfg.train.input_size;
    let t = &cfg.train;
    let mode = model.mode();
    let mut preds = Vec::with_capacity(pairs.len());
    for p in pairs {
        if let Some(bad) = p
            .mask
            .classes()
            .into_iter()
            .find(|c| *c != 0 && !protocol.test_classes.contains(c))
        {
            return Err(Error::InvalidInput(format!(
                "sample {} has class {bad}, outside the test classes {:?} of protocol {}",
                p.sample_id, protocol.test_classes, protocol.name
            )));
        }
        let (ng, ok, gt) = transform_pair(p, w, h, &AugmentParams::identity(w, h));
        let out = model.predict(
            &to_tensor(&ng, &t.norm_mean, &t.norm_std),
            &to_tensor(&ok, &t.norm_mean, &t.norm_std),
        )?;
        let (pred, prob) = match mode {
            DecoderMode::IntraClass => (argmax_mask(&out.logits), defect_probability(&out.logits)),
            DecoderMode::OutOfClass => (
                LabelMask::zeros(w, h),
                distance_probability(&out.dist, h, w),
            ),
        };
        preds.push(SamplePrediction {
            sample_id: p.sample_id.clone(),
            pred,
            gt,
            prob,
        });
    }
    let all_prob: Vec<f64> = preds.iter().flat_map(|s| s.prob.iter().copied()).collect();
    let all_gt: Vec<bool> = preds
        .iter()
        .flat_map(|s| s.gt.data().iter().map(|&y| y > 0))
        .collect();
    let curve = pr_ft_curves(
        &all_prob,
        &all_gt,
        &uniform_thresholds(DEFAULT_CURVE_LEVELS),
    )?;
    let best_f = best_fscore(&curve);
    let iou_at_half = {
        let (mut tp, mut fp, mut fn_) = (0u64, 0u64, 0u64);
        for (&p, &g) in all_prob.iter().zip(&all_gt) {
            match (p >= 0.5, g) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fn_ += 1,
                _ => {}
            }
        }
        if tp + fp + fn_ == 0 {
            1.0
        } else {
            tp as f64 / (tp + fp + fn_) as f64
        }
    };
    let (classes, threshold) = match mode {
        DecoderMode::IntraClass => (model.config.num_classes, None),
        DecoderMode::OutOfClass => {
            let th = best_f.map_or(0.5, |c| c.threshold);
            for s in &mut preds {
                s.pred = threshold_mask(&s.prob, w, h, th);
                s.gt = crate::data::binarize_mask(&s.gt);
            }
            (2, Some(th))
        }
    };
    let mut confusion = ConfusionMatrix::new(classes);
    for s in &preds {
        confusion.accumulate(&s.pred, &s.gt)?;
    }
    let report = EvalReport {
        protocol: protocol.name.to_string(),
        mode,
        samples: preds.len(),
        scores: scores(&confusion),
        confusion,
        threshold,
        best_fscore: best_f,
        best_iou: best_iou(&curve),
        iou_at_half,
    };
    Ok(Evaluation {
        report,
        curve,
        predictions: preds,
    })
}
