//! Seamlessly clones a bright square into a display pattern and reports the
//! discrete Poisson residual of the result.

use siamdefect::synlcd::poisson::poisson_residual;
use siamdefect::synlcd::{display_pattern, poisson_blend};
use siamdefect::Image;

fn main() -> siamdefect::Result<()> {
    let (w, h) = (64, 64);
    let target = display_pattern(2, w, h, 0);
    let mut source = target.clone();
    let mut mask = vec![false; w * h];
    for y in 20..44 {
        for x in 20..44 {
            mask[y * w + x] = true;
            if (26..38).contains(&x) && (26..38).contains(&y) {
                source.set_pixel(x, y, [250.0, 240.0, 200.0]);
            }
        }
    }
    let out = poisson_blend(&source, &target, &mask)?;
    println!(
        "max residual {:.2e}",
        poisson_residual(&out, &source, &mask)
    );
    let changed = |inside: bool| {
        (0..w * h)
            .filter(|&i| {
                mask[i] == inside && out.data()[i * 3..i * 3 + 3] != target.data()[i * 3..i * 3 + 3]
            })
            .count()
    };
    println!(
        "{} pixels changed inside the mask, {} outside",
        changed(true),
        changed(false)
    );
    let dir = std::env::temp_dir();
    out.save_png(&dir.join("poisson_out.png"))?;
    Image::from_fn(w, h, |x, y| [if mask[y * w + x] { 255.0 } else { 0.0 }; 3])
        .save_png(&dir.join("poisson_mask.png"))?;
    println!("images in {}", dir.display());
    Ok(())
}
