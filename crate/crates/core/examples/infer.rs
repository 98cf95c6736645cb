//! Segments defects in NG/OK image pairs with a trained checkpoint.
//!
//! ```text
//! cargo run --release --example infer -- <checkpoint> <ng.png> <ok.png> [out.png]
//! ```

use std::path::PathBuf;

use siamdefect::data::{to_tensor, transform_pair, AugmentParams};
use siamdefect::trainer::argmax_mask;
use siamdefect::{Checkpoint, Image, ImagePair, LabelMask};

fn main() -> siamdefect::Result<()> {
    let args: Vec<PathBuf> = std::env::args_os().skip(1).map(PathBuf::from).collect();
    if args.len() < 3 {
        eprintln!("usage: infer <checkpoint> <ng.png> <ok.png> [out.png]");
        std::process::exit(2);
    }
    let ck = Checkpoint::load(&args[0])?;
    let t = &ck.config.train;
    let [h, w] = t.input_size;
    let ng = Image::load_png(&args[1])?;
    let ok = Image::load_png(&args[2])?;
    let (ow, oh) = ng.dims();
    let pair = ImagePair {
        mask: LabelMask::zeros(ow, oh),
        ng,
        ok,
        pattern_id: String::new(),
        sample_id: String::new(),
    };
    let (ng, ok, _) = transform_pair(&pair, w, h, &AugmentParams::identity(w, h));
    let out = ck.model.predict(
        &to_tensor(&ng, &t.norm_mean, &t.norm_std),
        &to_tensor(&ok, &t.norm_mean, &t.norm_std),
    )?;
    let mask = argmax_mask(&out.logits).resize_nearest(ow, oh);
    for c in mask.classes() {
        println!("class {c}: {} pixels", mask.count(c));
    }
    let path = args
        .get(3)
        .cloned()
        .unwrap_or_else(|| PathBuf::from("prediction.png"));
    mask.save_png(&path)?;
    println!("wrote {}", path.display());
    Ok(())
}
