//! Scores a hand-made prediction: confusion matrix, per-class scores,
//! a precision/recall/F/IoU curve and the error-map counts.

use siamdefect::metrics::{
    best_fscore, confusion, error_map, pr_ft_curves, scores, uniform_thresholds,
};
use siamdefect::LabelMask;

fn main() -> siamdefect::Result<()> {
    let (w, h) = (16, 16);
    // A line along column 4 and a blob near the centre.
    let gt = LabelMask::new(
        w,
        h,
        (0..w * h)
            .map(|i| {
                let (x, y) = (i % w, i / w);
                if x == 4 {
                    1
                } else if (x as i32 - 10).pow(2) + (y as i32 - 8).pow(2) <= 4 {
                    2
                } else {
                    0
                }
            })
            .collect(),
    );
    // The prediction shifts the blob one pixel right and misses the line's top.
    let pred = LabelMask::new(
        w,
        h,
        (0..w * h)
            .map(|i| {
                let (x, y) = (i % w, i / w);
                if x == 4 && y >= 3 {
                    1
                } else if (x as i32 - 11).pow(2) + (y as i32 - 8).pow(2) <= 4 {
                    2
                } else {
                    0
                }
            })
            .collect(),
    );

    let m = confusion(&pred, &gt, 3)?;
    let s = scores(&m);
    for (c, pc) in s.per_class.iter().enumerate() {
        if let Some(pc) = pc {
            println!(
                "class {c}: precision {:.3} recall {:.3} F {:.3} IoU {:.3}",
                pc.precision, pc.recall, pc.fscore, pc.iou
            );
        }
    }
    println!(
        "mIoU {:.4}  mAcc {:.4}  aAcc {:.4}  mFscore {:.4}",
        s.miou, s.macc, s.aacc, s.mfscore
    );

    // A soft score that is high on predicted defects and lower elsewhere.
    let prob: Vec<f64> = pred
        .data()
        .iter()
        .enumerate()
        .map(|(i, &p)| if p > 0 { 0.9 } else { (i % 7) as f64 / 10.0 })
        .collect();
    let gt_bin: Vec<bool> = gt.data().iter().map(|&c| c > 0).collect();
    let curve = pr_ft_curves(&prob, &gt_bin, &uniform_thresholds(11))?;
    let best = best_fscore(&curve).expect("non-empty curve");
    println!(
        "best F {:.3} at threshold {:.2}",
        best.fscore(),
        best.threshold
    );

    let (_, counts) = error_map(&pred, &gt)?;
    println!(
        "error map: {} hits, {} false alarms, {} misses, Err = {}",
        counts.tp,
        counts.fp,
        counts.fn_,
        counts.err()
    );
    Ok(())
}
