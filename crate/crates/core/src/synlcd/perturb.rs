//! Global photometric perturbations.
//!
//! `out = clip(alpha * in + bias + offset_c + n)` per channel, where `n` is
//! signal-dependent Gaussian noise approximating a Poisson-Gaussian sensor:
//! `Var[n] = s^2 * (NOISE_GAIN * max(signal, 0) + NOISE_READ^2)` with `s` the
//! ISO strength and `signal` the value before noise.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::spec::Perturbation;
use crate::error::{Error, Result};
use crate::image::Image;

/// Shot-noise gain in gray levels per gray level.
pub const NOISE_GAIN: f64 = 0.25;
/// Signal-independent read-noise deviation in gray levels.
pub const NOISE_READ: f64 = 2.0;

/// Noise variance at a given pre-noise signal level and strength.
pub fn noise_variance(signal: f64, strength: f64) -> f64 {
    strength * strength * (NOISE_GAIN * signal.max(0.0) + NOISE_READ * NOISE_READ)
}

/// Value before noise and clipping.
pub fn affine(value: f64, channel: usize, p: &Perturbation) -> f64 {
    p.contrast_alpha() * value + p.brightness_bias as f64 + p.channel_offsets[channel]
}

pub fn apply_perturbations(image: &Image, p: &Perturbation) -> Result<Image> {
    let v = p.applicable_violations();
    if !v.is_empty() {
        return Err(Error::InvalidInput(format!(
            "perturbation out of range: {}",
            v.join("; ")
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(p.noise_seed);
    let mut out = image.clone();
    for (i, v) in out.data_mut().iter_mut().enumerate() {
        let signal = affine(*v, i % 3, p);
        let noise = if p.iso_noise > 0.0 {
            let z: f64 = StandardNormal.sample(&mut rng);
            z * noise_variance(signal, p.iso_noise).sqrt()
        } else {
            0.0
        };
        *v = (signal + noise).clamp(0.0, 255.0);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn neutral_is_identity() {
        let img = Image::from_fn(7, 5, |x, y| [x as f64 * 30.0, y as f64 * 40.0, 17.0]);
        assert_eq!(
            apply_perturbations(&img, &Perturbation::NEUTRAL).unwrap(),
            img
        );
    }

    #[test]
    fn affine_arithmetic() {
        let img = Image::filled(4, 4, [128.0; 3]);
        let p = Perturbation {
            brightness_bias: 6,
            contrast_tenths: 5,
            ..Perturbation::NEUTRAL
        };
        let out = apply_perturbations(&img, &p).unwrap();
        assert!(out.data().iter().all(|&v| v == 70.0));
    }

    #[test]
    fn out_of_range_is_rejected() {
        let img = Image::filled(2, 2, [0.0; 3]);
        let p = Perturbation {
            contrast_tenths: 20,
            ..Perturbation::NEUTRAL
        };
        assert!(apply_perturbations(&img, &p).is_err());
        let p = Perturbation {
            rgb_deviation: 3,
            channel_offsets: [4.0, 0.0, 0.0],
            ..Perturbation::NEUTRAL
        };
        assert!(apply_perturbations(&img, &p).is_err());
    }
}
