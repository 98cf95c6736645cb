//! Trains on in-memory synthetic pairs, round-trips a checkpoint and
//! evaluates on held-out pairs. Extra arguments are `key=value` config
//! overrides, e.g. `train.protocol="label_fraction" train.label_fraction=0.5`.
//!
//! ```text
//! cargo run --release --example train_eval -- [key=value ...]
//! ```

use siamdefect::metrics::write_curves;
use siamdefect::synlcd::{builtin_patterns, synthesize_pairs, DefectType};
use siamdefect::{evaluate, Checkpoint, Config, ProtocolSpec, Trainer};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut overrides = vec![
        "train.input_size=[64, 64]".to_string(),
        "train.iterations=100".into(),
        "train.learning_rate=6e-4".into(),
        "train.warmup_iters=10".into(),
    ];
    overrides.extend(std::env::args().skip(1));
    let cfg = Config::default().with_overrides(&overrides)?;
    let protocol = ProtocolSpec::from_config(&cfg);

    let patterns = builtin_patterns(64, 64, 2);
    let mut train = Vec::new();
    let mut test = Vec::new();
    for t in [DefectType::Line, DefectType::Abpt, DefectType::Mixed] {
        train.extend(synthesize_pairs(&patterns, t, 6, 1)?);
        test.extend(synthesize_pairs(&patterns, t, 3, 2)?);
    }
    let train = protocol.training_pairs(&train, cfg.train.seed)?;
    let test = protocol.test_pairs(&test);
    println!(
        "protocol {}: {} training pairs, {} test pairs",
        protocol.name,
        train.len(),
        test.len()
    );

    let mut trainer = Trainer::new(cfg.clone())?;
    let history = trainer.run(&train, |r| {
        if r.step % 10 == 0 {
            println!("step {:3}  {}", r.step, r.csv_line());
        }
    })?;
    println!("{} steps", history.len());

    let dir = std::env::temp_dir().join("siamdefect-train-eval");
    std::fs::create_dir_all(&dir)?;
    let path = dir.join("checkpoint.bin");
    trainer.checkpoint().save(&path)?;
    let restored = Checkpoint::load(&path)?;
    assert_eq!(restored.model.store, trainer.model.store);

    let ev = evaluate(&restored.model, &test, &protocol, &restored.config)?;
    let s = &ev.report.scores;
    println!(
        "mIoU {:.4}  mAcc {:.4}  aAcc {:.4}  mFscore {:.4}",
        s.miou, s.macc, s.aacc, s.mfscore
    );
    if let Some(best) = ev.report.best_iou {
        println!(
            "best binary IoU {:.4} at threshold {:.3}",
            best.iou(),
            best.threshold
        );
    }
    write_curves(&ev.curve, &dir.join("curves.csv"))?;
    println!("checkpoint and curves in {}", dir.display());
    Ok(())
}
