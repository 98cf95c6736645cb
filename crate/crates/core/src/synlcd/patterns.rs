//! Procedural clean display patterns standing in for captured LCD screens.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::image::Image;

/// Number of built-in pattern kinds.
pub const NUM_PATTERNS: usize = 10;

const BARS: [[f64; 3]; 8] = [
    [235.0, 235.0, 235.0],
    [235.0, 235.0, 16.0],
    [16.0, 235.0, 235.0],
    [16.0, 235.0, 16.0],
    [235.0, 16.0, 235.0],
    [235.0, 16.0, 16.0],
    [16.0, 16.0, 235.0],
    [16.0, 16.0, 16.0],
];

/// Short name of pattern `kind`.
pub fn pattern_name(kind: usize) -> &'static str {
    [
        "colorbars",
        "checker",
        "hgradient",
        "grid",
        "hstripes",
        "rings",
        "subpixel",
        "radial",
        "blocks",
        "diagonal",
    ][kind % NUM_PATTERNS]
}

/// Renders pattern `kind` (taken modulo [`NUM_PATTERNS`]). `seed` only
/// affects the kinds with random layout.
pub fn display_pattern(kind: usize, width: usize, height: usize, seed: u64) -> Image {
    let (wf, hf) = (width as f64, height as f64);
    let cell = (width.min(height) / 8).max(2);
    match kind % NUM_PATTERNS {
        0 => Image::from_fn(width, height, |x, _| BARS[x * 8 / width.max(1)]),
        1 => Image::from_fn(width, height, |x, y| {
            if (x / cell + y / cell).is_multiple_of(2) {
                [220.0; 3]
            } else {
                [30.0; 3]
            }
        }),
        2 => Image::from_fn(width, height, |x, _| {
            let v = 20.0 + 215.0 * x as f64 / (wf - 1.0).max(1.0);
            [v, v * 0.9, v * 0.8]
        }),
        3 => Image::from_fn(width, height, |x, y| {
            if x % cell == 0 || y % cell == 0 {
                [230.0; 3]
            } else {
                [40.0, 40.0, 60.0]
            }
        }),
        4 => Image::from_fn(width, height, |_, y| {
            if (y / (cell / 2).max(1)).is_multiple_of(2) {
                [200.0, 60.0, 60.0]
            } else {
                [60.0, 60.0, 200.0]
            }
        }),
        5 => Image::from_fn(width, height, |x, y| {
            let r = ((x as f64 - wf / 2.0).powi(2) + (y as f64 - hf / 2.0).powi(2)).sqrt();
            let v = 128.0 + 100.0 * (r / cell as f64 * std::f64::consts::PI).cos();
            [v; 3]
        }),
        6 => Image::from_fn(width, height, |x, _| {
            let mut p = [30.0; 3];
            p[x % 3] = 220.0;
            p
        }),
        7 => Image::from_fn(width, height, |x, y| {
            let r = ((x as f64 - wf / 2.0).powi(2) + (y as f64 - hf / 2.0).powi(2)).sqrt();
            let v = 230.0 - 200.0 * (r / (wf.hypot(hf) / 2.0)).min(1.0);
            [v * 0.8, v, v * 0.9]
        }),
        8 => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut img = Image::filled(width, height, [225.0; 3]);
            for _ in 0..12 {
                let bw = rng.random_range(cell / 2..=cell * 2).max(1);
                let bh = rng.random_range(1..=(cell / 2).max(1));
                let x0 = rng.random_range(0..width.saturating_sub(bw).max(1));
                let y0 = rng.random_range(0..height.saturating_sub(bh).max(1));
                for y in y0..(y0 + bh).min(height) {
                    for x in x0..(x0 + bw).min(width) {
                        img.set_pixel(x, y, [25.0; 3]);
                    }
                }
            }
            img
        }
        _ => Image::from_fn(width, height, |x, y| {
            if ((x + y) / cell).is_multiple_of(2) {
                [180.0, 200.0, 60.0]
            } else {
                [40.0, 30.0, 120.0]
            }
        }),
    }
}

/// All built-in patterns at one size, paired with their ids.
pub fn builtin_patterns(width: usize, height: usize, seed: u64) -> Vec<(String, Image)> {
    (0..NUM_PATTERNS)
        .map(|k| {
            (
                format!("p{k}-{}", pattern_name(k)),
                display_pattern(k, width, height, seed),
            )
        })
        .collect()
}
