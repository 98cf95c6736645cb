//! Trains on abnormal-point defects only and segments unseen line defects
//! from the distance map.
//!
//! ```text
//! cargo run --release --example out_of_class -- [steps] [pairs]
//! ```

use siamdefect::synlcd::{builtin_patterns, synthesize_pairs, DefectType};
use siamdefect::{evaluate, Config, ProtocolSpec, Trainer};

fn main() -> siamdefect::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let steps: usize = args.first().map_or(300, |s| s.parse().expect("steps"));
    let count: usize = args.get(1).map_or(8, |s| s.parse().expect("pairs"));

    let patterns = builtin_patterns(128, 128, 1);
    let train = synthesize_pairs(&patterns, DefectType::Abpt, count, 11)?;
    let test = synthesize_pairs(&patterns, DefectType::Line, count, 12)?;
    let cfg = Config::default().with_overrides(&[
        "train.input_size=[128, 128]".to_string(),
        format!("train.iterations={steps}"),
        "train.batch_size=2".into(),
        "train.learning_rate=6e-4".into(),
        "train.warmup_iters=20".into(),
        "train.augment=false".into(),
        "train.protocol=\"cross_class\"".into(),
        "train.cross_class=\"AL\"".into(),
        "model.mode=\"out_of_class\"".into(),
    ])?;
    let protocol = ProtocolSpec::from_config(&cfg);
    let train = protocol.training_pairs(&train, cfg.train.seed)?;

    let mut trainer = Trainer::new(cfg.clone())?;
    let before = evaluate(&trainer.model, &test, &protocol, &cfg)?.report;
    trainer.run(&train, |r| {
        if r.step % 50 == 0 {
            println!("step {:4}  bcl {:.4}", r.step, r.bcl);
        }
    })?;
    let after = evaluate(&trainer.model, &test, &protocol, &cfg)?.report;
    for (name, r) in [("untrained", &before), ("trained", &after)] {
        let best = r.best_iou.expect("binary curve");
        println!(
            "{name:9}  best IoU {:.4} at threshold {:.3}  IoU at 0.5 {:.4}",
            best.iou(),
            best.threshold,
            r.iou_at_half
        );
    }
    Ok(())
}
