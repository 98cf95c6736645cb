//! Parameter count and analytic compute of the default model.
//!
//! ```text
//! cargo run --release --example complexity -- [size]
//! ```

use siamdefect::complexity::{count_cad_parameters, count_parameters, estimate_flops};
use siamdefect::config::ModelConfig;
use siamdefect::model::Model;

fn main() {
    let size: usize = std::env::args()
        .nth(1)
        .map_or(512, |s| s.parse().expect("size"));
    let cfg = ModelConfig::default();
    let model = Model::new(&cfg, 0);
    let plain = Model::new(
        &ModelConfig {
            cad: false,
            ..cfg.clone()
        },
        0,
    );
    println!("parameters      {:>10}", count_parameters(&model));
    println!(
        "  encoder       {:>10}",
        model.store.num_scalars_with_prefix("encoder.")
    );
    println!("without CAD     {:>10}", count_parameters(&plain));
    println!("CAD attention   {:>10}", count_cad_parameters(&model));
    let f = estimate_flops(&cfg, size, size);
    println!("at {size}x{size}: {:.2} GFLOPs", f.gflops());
    for (part, macs) in [
        ("encoder", f.encoder_macs),
        ("fusion", f.fusion_macs),
        ("head", f.head_macs),
        ("cad", f.cad_macs),
    ] {
        println!("  {part:8} {:>8.3} GMACs", macs / 1e9);
    }
}
