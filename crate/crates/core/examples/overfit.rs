//! Overfits a handful of synthetic 128x128 pairs and reports training mIoU.
//!
//! ```text
//! cargo run --release --example overfit -- [steps] [pairs] [batch] [learning-rate]
//! ```

use std::time::Instant;

use siamdefect::synlcd::{builtin_patterns, synthesize_pairs, DefectType};
use siamdefect::{evaluate, Config, ProtocolSpec, Trainer};

fn main() -> siamdefect::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let arg = |i: usize, default: &str| args.get(i).cloned().unwrap_or_else(|| default.to_string());
    let steps: usize = arg(0, "300").parse().expect("steps");
    let count: usize = arg(1, "8").parse().expect("pairs");

    let patterns = builtin_patterns(128, 128, 1);
    let pairs = synthesize_pairs(&patterns, DefectType::Mixed, count, 7)?;
    let cfg = Config::default().with_overrides(&[
        "train.input_size=[128, 128]".to_string(),
        format!("train.iterations={steps}"),
        format!("train.batch_size={}", arg(2, "2")),
        format!("train.learning_rate={}", arg(3, "6e-4")),
        "train.warmup_iters=20".into(),
        "train.augment=false".into(),
    ])?;
    let protocol = ProtocolSpec::from_config(&cfg);
    let mut trainer = Trainer::new(cfg.clone())?;
    let start = Instant::now();
    trainer.run(&pairs, |r| {
        if r.step % 10 == 0 || r.step == 1 {
            println!(
                "step {:4}  cel {:.4}  bcl {:.4}  total {:.4}  ({:.1}s)",
                r.step,
                r.cel,
                r.bcl,
                r.total,
                start.elapsed().as_secs_f64()
            );
        }
    })?;
    let eval = evaluate(&trainer.model, &pairs, &protocol, &cfg)?;
    println!("training-set mIoU {:.4}", eval.report.scores.miou);
    Ok(())
}
