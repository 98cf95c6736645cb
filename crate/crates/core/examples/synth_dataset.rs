//! Writes a synthetic NG/OK/mask dataset with a manifest.
//!
//! ```text
//! cargo run --release --example synth_dataset -- [out-dir] [per-type-count] [size]
//! ```

use std::path::PathBuf;

use siamdefect::synlcd::{build_dataset, builtin_patterns, BuildOptions, Split};

fn main() -> siamdefect::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let out = PathBuf::from(args.first().map_or("synlcd", String::as_str));
    let count: usize = args.get(1).map_or(4, |s| s.parse().expect("count"));
    let size: usize = args.get(2).map_or(256, |s| s.parse().expect("size"));

    let patterns = builtin_patterns(size, size, 0);
    let manifest = build_dataset(&patterns, &out, &BuildOptions::new(count, 0))?;
    let train = manifest.iter().filter(|e| e.split == Split::Train).count();
    println!(
        "{} patterns, {} samples ({} train, {} test) in {}",
        patterns.len(),
        manifest.len(),
        train,
        manifest.len() - train,
        out.display()
    );
    if let Some(e) = manifest.first() {
        println!(
            "first sample {}: {:?}, {} lines, {} clusters",
            e.name, e.spec.defect_type, e.spec.line_areas, e.spec.abpt_clusters
        );
    }
    Ok(())
}
