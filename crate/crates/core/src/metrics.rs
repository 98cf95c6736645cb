//! Segmentation scores, threshold curves and error maps.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{Image, LabelMask};

/// Pixel tallies; rows are ground truth, columns prediction.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub classes: usize,
    pub counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        Self {
            classes,
            counts: vec![0; classes * classes],
        }
    }

    pub fn get(&self, gt: usize, pred: usize) -> u64 {
        self.counts[gt * self.classes + pred]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Adds the tallies of one prediction.
    pub fn accumulate(&mut self, pred: &LabelMask, gt: &LabelMask) -> Result<()> {
        if (pred.width(), pred.height()) != (gt.width(), gt.height()) {
            return Err(Error::Shape(format!(
                "prediction {}x{} vs ground truth {}x{}",
                pred.width(),
                pred.height(),
                gt.width(),
                gt.height()
            )));
        }
        let c = self.classes;
        for (&p, &g) in pred.data().iter().zip(gt.data()) {
            let (p, g) = (p as usize, g as usize);
            if p >= c || g >= c {
                return Err(Error::InvalidInput(format!(
                    "class id {} is outside [0, {c})",
                    p.max(g)
                )));
            }
            self.counts[g * c + p] += 1;
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) {
        assert_eq!(
            self.classes, other.classes,
            "merging matrices of different sizes"
        );
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
    }

    pub fn true_positives(&self, c: usize) -> u64 {
        self.get(c, c)
    }

    pub fn false_positives(&self, c: usize) -> u64 {
        (0..self.classes)
            .filter(|&g| g != c)
            .map(|g| self.get(g, c))
            .sum()
    }

    pub fn false_negatives(&self, c: usize) -> u64 {
        (0..self.classes)
            .filter(|&p| p != c)
            .map(|p| self.get(c, p))
            .sum()
    }

    /// Collapses all defect classes into one: `[[tn, fp], [fn, tp]]`.
    pub fn binary(&self) -> ConfusionMatrix {
        let mut out = ConfusionMatrix::new(2);
        for g in 0..self.classes {
            for p in 0..self.classes {
                let (gb, pb) = ((g > 0) as usize, (p > 0) as usize);
                out.counts[gb * 2 + pb] += self.get(g, p);
            }
        }
        out
    }
}

/// Tallies `pred` against `gt` over `classes` ids.
pub fn confusion(pred: &LabelMask, gt: &LabelMask, classes: usize) -> Result<ConfusionMatrix> {
    let mut m = ConfusionMatrix::new(classes);
    m.accumulate(pred, gt)?;
    Ok(m)
}

/// `num / den`, with an empty denominator meaning nothing went wrong.
fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        1.0
    } else {
        num as f64 / den as f64
    }
}

/// Harmonic mean of precision and recall, 0 when both are 0.
pub fn fscore(p: f64, r: f64) -> f64 {
    if p + r > 0.0 {
        2.0 * p * r / (p + r)
    } else {
        0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassScores {
    pub precision: f64,
    pub recall: f64,
    pub fscore: f64,
    pub iou: f64,
}

impl ClassScores {
    pub fn from_counts(tp: u64, fp: u64, fn_: u64) -> Self {
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        Self {
            precision,
            recall,
            fscore: fscore(precision, recall),
            iou: ratio(tp, tp + fp + fn_),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    /// `None` for classes absent from both prediction and ground truth.
    pub per_class: Vec<Option<ClassScores>>,
    pub miou: f64,
    /// Mean per-class recall.
    pub macc: f64,
    /// Overall pixel accuracy.
    pub aacc: f64,
    pub mfscore: f64,
}

/// Per-class and class-averaged scores. Classes that appear in neither the
/// prediction nor the ground truth are left out of every mean.
pub fn scores(m: &ConfusionMatrix) -> Scores {
    let per_class: Vec<Option<ClassScores>> = (0..m.classes)
        .map(|c| {
            let (tp, fp, fn_) = (
                m.true_positives(c),
                m.false_positives(c),
                m.false_negatives(c),
            );
            (tp + fp + fn_ > 0).then(|| ClassScores::from_counts(tp, fp, fn_))
        })
        .collect();
    let present: Vec<&ClassScores> = per_class.iter().flatten().collect();
    let mean = |f: fn(&ClassScores) -> f64| {
        if present.is_empty() {
            0.0
        } else {
            present.iter().map(|s| f(s)).sum::<f64>() / present.len() as f64
        }
    };
    let correct: u64 = (0..m.classes).map(|c| m.get(c, c)).sum();
    Scores {
        miou: mean(|s| s.iou),
        macc: mean(|s| s.recall),
        mfscore: mean(|s| s.fscore),
        aacc: ratio(correct, m.total()),
        per_class,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub threshold: f64,
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
}

impl CurvePoint {
    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp)
    }

    pub fn recall(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }

    pub fn fscore(&self) -> f64 {
        fscore(self.precision(), self.recall())
    }

    pub fn iou(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp + self.fn_)
    }
}

/// `n` evenly spaced thresholds covering `[0, 1]`.
pub fn uniform_thresholds(n: usize) -> Vec<f64> {
    assert!(n >= 2, "need at least two thresholds");
    (0..n).map(|i| i as f64 / (n - 1) as f64).collect()
}

/// Default curve resolution.
pub const DEFAULT_CURVE_LEVELS: usize = 256;

/// Precision/recall/F per threshold, predicting defect where `prob >= t`.
/// `gt` marks defect pixels.
pub fn pr_ft_curves(prob: &[f64], gt: &[bool], thresholds: &[f64]) -> Result<Vec<CurvePoint>> {
    if prob.len() != gt.len() {
        return Err(Error::Shape(format!(
            "{} probabilities vs {} labels",
            prob.len(),
            gt.len()
        )));
    }
    if thresholds.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::InvalidInput(
            "thresholds must be strictly increasing".into(),
        ));
    }
    // Sort once, then sweep: pixels with prob >= t form a suffix.
    let mut order: Vec<usize> = (0..prob.len()).collect();
    order.sort_by(|&a, &b| prob[a].total_cmp(&prob[b]));
    let positives = gt.iter().filter(|&&g| g).count() as u64;
    // suffix_tp[i] = defect pixels among order[i..].
    let mut suffix_tp = vec![0u64; order.len() + 1];
    for i in (0..order.len()).rev() {
        suffix_tp[i] = suffix_tp[i + 1] + gt[order[i]] as u64;
    }
    let mut start = 0;
    let mut out = Vec::with_capacity(thresholds.len());
    for &t in thresholds {
        while start < order.len() && prob[order[start]] < t {
            start += 1;
        }
        let predicted = (order.len() - start) as u64;
        let tp = suffix_tp[start];
        out.push(CurvePoint {
            threshold: t,
            tp,
            fp: predicted - tp,
            fn_: positives - tp,
        });
    }
    Ok(out)
}

/// Curve point with the highest F-score (first one on ties).
pub fn best_fscore(curve: &[CurvePoint]) -> Option<CurvePoint> {
    curve
        .iter()
        .copied()
        .fold(None, |best: Option<CurvePoint>, p| match best {
            Some(b) if b.fscore() >= p.fscore() => Some(b),
            _ => Some(p),
        })
}

/// Curve point with the highest IoU (first one on ties).
pub fn best_iou(curve: &[CurvePoint]) -> Option<CurvePoint> {
    curve
        .iter()
        .copied()
        .fold(None, |best: Option<CurvePoint>, p| match best {
            Some(b) if b.iou() >= p.iou() => Some(b),
            _ => Some(p),
        })
}

/// Text table with header `threshold,precision,recall,fscore`.
pub fn curves_csv(curve: &[CurvePoint]) -> String {
    let mut s = String::from("threshold,precision,recall,fscore\n");
    for p in curve {
        writeln!(
            s,
            "{},{},{},{}",
            p.threshold,
            p.precision(),
            p.recall(),
            p.fscore()
        )
        .unwrap();
    }
    s
}

pub fn write_curves(curve: &[CurvePoint], path: &Path) -> Result<()> {
    std::fs::write(path, curves_csv(curve)).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ErrorCounts {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
}

impl ErrorCounts {
    /// Missed plus wrongly detected pixels.
    pub fn err(&self) -> u64 {
        self.fp + self.fn_
    }
}

pub const COLOR_HIT: [f64; 3] = [255.0, 255.0, 255.0];
pub const COLOR_MISS: [f64; 3] = [0.0, 255.0, 0.0];
pub const COLOR_FALSE: [f64; 3] = [255.0, 0.0, 0.0];

/// Renders defect-vs-background agreement: white hits, green misses, red
/// false detections, black elsewhere.
pub fn error_map(pred: &LabelMask, gt: &LabelMask) -> Result<(Image, ErrorCounts)> {
    if (pred.width(), pred.height()) != (gt.width(), gt.height()) {
        return Err(Error::Shape(format!(
            "prediction {}x{} vs ground truth {}x{}",
            pred.width(),
            pred.height(),
            gt.width(),
            gt.height()
        )));
    }
    let mut img = Image::filled(pred.width(), pred.height(), [0.0; 3]);
    let mut counts = ErrorCounts::default();
    for (i, (&p, &g)) in pred.data().iter().zip(gt.data()).enumerate() {
        let color = match (p > 0, g > 0) {
            (true, true) => {
                counts.tp += 1;
                COLOR_HIT
            }
            (false, true) => {
                counts.fn_ += 1;
                COLOR_MISS
            }
            (true, false) => {
                counts.fp += 1;
                COLOR_FALSE
            }
            (false, false) => continue,
        };
        img.set_pixel(i % pred.width(), i / pred.width(), color);
    }
    Ok((img, counts))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_prediction_is_diagonal() {
        let m = LabelMask::new(3, 2, vec![0, 1, 2, 2, 1, 0]);
        let c = confusion(&m, &m, 3).unwrap();
        for g in 0..3 {
            for p in 0..3 {
                assert_eq!(c.get(g, p) > 0, g == p);
            }
        }
        let s = scores(&c);
        assert_eq!((s.miou, s.mfscore, s.aacc), (1.0, 1.0, 1.0));
    }

    #[test]
    fn all_background_prediction() {
        let mut gt = LabelMask::zeros(10, 10);
        for i in 0..40 {
            gt.data_mut()[i] = 1;
        }
        let pred = LabelMask::zeros(10, 10);
        let c = confusion(&pred, &gt, 2).unwrap();
        assert_eq!(c.get(1, 0), 40);
        assert_eq!(scores(&c).per_class[1].unwrap().iou, 0.0);
    }

    #[test]
    fn formula_example() {
        let s = ClassScores::from_counts(50, 10, 40);
        assert!((s.precision - 0.833_333).abs() < 1e-4);
        assert!((s.recall - 0.555_556).abs() < 1e-4);
        assert!((s.fscore - 0.666_667).abs() < 1e-4);
        assert_eq!(s.iou, 0.5);
    }

    #[test]
    fn absent_class_is_excluded_from_means() {
        let m = LabelMask::new(2, 1, vec![0, 1]);
        let s = scores(&confusion(&m, &m, 3).unwrap());
        assert!(s.per_class[2].is_none());
        assert_eq!(s.miou, 1.0);
    }

    #[test]
    fn separable_curves_and_zero_threshold() {
        let gt = [true, false, true, false];
        let prob = [1.0, 0.0, 1.0, 0.0];
        let curve = pr_ft_curves(&prob, &gt, &[0.0, 0.3, 0.7]).unwrap();
        assert_eq!(curve[0].recall(), 1.0);
        for p in &curve[1..] {
            assert_eq!((p.precision(), p.recall(), p.fscore()), (1.0, 1.0, 1.0));
        }
        assert!(pr_ft_curves(&prob, &gt, &[0.5, 0.5]).is_err());
        let csv = curves_csv(&curve);
        assert!(csv.starts_with("threshold,precision,recall,fscore\n"));
        assert_eq!(csv.lines().count(), 4);
    }

    #[test]
    fn error_map_examples() {
        let gt = LabelMask::new(5, 5, vec![1; 25]);
        let (img, e) = error_map(&LabelMask::zeros(5, 5), &gt).unwrap();
        assert_eq!((e.fn_, e.err()), (25, 25));
        assert_eq!(img.pixel(0, 0), COLOR_MISS);
        let (_, e) = error_map(&gt, &gt).unwrap();
        assert_eq!(e.err(), 0);
    }
}
