#[path = "common/mod.rs"]
mod common;

use common::{channel, dense_poisson};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use siamdefect::synlcd::{poisson_blend, poisson_blend_padded};
use siamdefect::Image;

fn random_image(rng: &mut ChaCha8Rng, w: usize, h: usize) -> Image {
    Image::from_fn(w, h, |_, _| {
        [
            rng.random_range(0.0..255.0),
            rng.random_range(0.0..255.0),
            rng.random_range(0.0..255.0),
        ]
    })
}

/// Random interior mask with at least one unknown.
fn interior_mask(rng: &mut ChaCha8Rng, w: usize, h: usize) -> Vec<bool> {
    let p = rng.random_range(0.2..0.9);
    let mut m: Vec<bool> = (0..w * h)
        .map(|i| {
            let (x, y) = (i % w, i / w);
            x > 0 && y > 0 && x + 1 < w && y + 1 < h && rng.random_bool(p)
        })
        .collect();
    m[w + 1] = true;
    m
}

#[test]
pub fn matches_dense_solve_on_random_problems() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for case in 0..50 {
        let w = rng.random_range(5..=16);
        let h = rng.random_range(5..=16);
        let src = random_image(&mut rng, w, h);
        let dst = random_image(&mut rng, w, h);
        let mask = interior_mask(&mut rng, w, h);
        let out = poisson_blend(&src, &dst, &mask).unwrap();
        for c in 0..3 {
            let want = dense_poisson(&channel(&src, c), &channel(&dst, c), &mask, w, h);
            let err = channel(&out, c)
                .iter()
                .zip(&want)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            assert!(err < 1e-6, "case {case} ({w}x{h}) channel {c}: {err}");
        }
    }
}

#[test]
pub fn empty_mask_is_exact_identity() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let src = random_image(&mut rng, 9, 7);
    let dst = random_image(&mut rng, 9, 7);
    assert_eq!(poisson_blend(&src, &dst, &[false; 63]).unwrap(), dst);
    assert_eq!(poisson_blend_padded(&src, &dst, &[false; 63]).unwrap(), dst);
}

#[test]
fn source_equal_to_target_is_a_fixed_point() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let img = random_image(&mut rng, 10, 10);
    let mask = interior_mask(&mut rng, 10, 10);
    let out = poisson_blend(&img, &img, &mask).unwrap();
    assert!(out
        .data()
        .iter()
        .zip(img.data())
        .all(|(a, b)| (a - b).abs() < 1e-8));
}

#[test]
fn border_masks_need_padding() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let src = random_image(&mut rng, 6, 6);
    let dst = random_image(&mut rng, 6, 6);
    let mut mask = vec![false; 36];
    mask[0] = true;
    mask[7] = true;
    assert!(poisson_blend(&src, &dst, &mask).is_err());
    let out = poisson_blend_padded(&src, &dst, &mask).unwrap();
    assert!(out.data().iter().all(|v| v.is_finite()));
    for i in (0..36).filter(|&i| !mask[i]) {
        assert_eq!(out.pixel(i % 6, i / 6), dst.pixel(i % 6, i / 6));
    }
}
