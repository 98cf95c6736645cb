//! Composing one synthetic NG/OK/mask triplet.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::defects::{gaussian_blur, sample_blobs, sample_lines, DefectLayer};
use super::perturb::apply_perturbations;
use super::poisson::poisson_blend_padded;
use super::spec::{ranges, DefectType, Perturbation, SynthesisSpec};
use crate::error::Result;
use crate::image::{Image, LabelMask};

/// Blur applied to the defect layer before blending.
pub const DEFECT_BLUR_SIGMA: f64 = 1.0;

/// A generated training pair with its exact labels.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthSample {
    pub ng: Image,
    pub ok: Image,
    pub mask: LabelMask,
    pub spec: SynthesisSpec,
}

/// A defect layer together with its label mask.
#[derive(Debug, Clone, PartialEq)]
pub struct DefectDraw {
    pub layer: DefectLayer,
    pub mask: LabelMask,
    /// Set when the pattern offered no edges to place abnormal points on.
    pub no_edges: bool,
}

fn draw(width: usize, height: usize, layer: DefectLayer, no_edges: bool) -> DefectDraw {
    let mask = LabelMask::new(width, height, layer.class.clone());
    DefectDraw {
        layer,
        mask,
        no_edges,
    }
}

/// `k` screen-spanning lines on `clean`, one per vertical strip.
pub fn generate_line_defects<R: Rng + ?Sized>(clean: &Image, k: usize, rng: &mut R) -> DefectDraw {
    let (w, h) = clean.dims();
    let lines = sample_lines(w, k, rng);
    draw(w, h, DefectLayer::render(w, h, &lines, &[]), false)
}

/// Abnormal-point blobs clustered on the edges of `clean`.
pub fn generate_abpt_defects<R: Rng + ?Sized>(
    clean: &Image,
    clusters: usize,
    rng: &mut R,
) -> DefectDraw {
    let (w, h) = clean.dims();
    let blobs = sample_blobs(clean, clusters, rng);
    let empty = blobs.is_empty();
    draw(w, h, DefectLayer::render(w, h, &[], &blobs), empty)
}

/// Draws perturbation parameters from the generation ranges.
pub fn sample_perturbation<R: Rng + ?Sized>(rng: &mut R) -> Perturbation {
    let dev_steps = ranges::RGB_DEVIATION.end() / ranges::RGB_DEVIATION_STEP;
    let rgb_deviation = rng.random_range(1..=dev_steps) * ranges::RGB_DEVIATION_STEP;
    let d = rgb_deviation as f64;
    Perturbation {
        brightness_bias: rng.random_range(ranges::BRIGHTNESS_BIAS),
        contrast_tenths: rng.random_range(ranges::CONTRAST_TENTHS),
        iso_noise: rng.random_range(ranges::ISO_NOISE),
        rgb_deviation,
        channel_offsets: [
            rng.random_range(-d..=d),
            rng.random_range(-d..=d),
            rng.random_range(-d..=d),
        ],
        noise_seed: rng.random(),
    }
}

/// Samples every random choice of one sample. The defect geometry of
/// abnormal points depends on `pattern`.
pub fn sample_spec(
    pattern: &Image,
    pattern_id: &str,
    defect_type: DefectType,
    seed: u64,
) -> SynthesisSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (w, _) = pattern.dims();
    let (line_areas, lines) = if defect_type.has_lines() {
        let k = rng.random_range(ranges::LINE_AREAS).min((w / 3).max(1));
        (k, sample_lines(w, k, &mut rng))
    } else {
        (0, Vec::new())
    };
    let (abpt_clusters, blobs) = if defect_type.has_abpt() {
        let k = rng.random_range(ranges::ABPT_CLUSTERS);
        (k, sample_blobs(pattern, k, &mut rng))
    } else {
        (0, Vec::new())
    };
    SynthesisSpec {
        seed,
        pattern_id: pattern_id.to_string(),
        defect_type,
        line_areas,
        lines,
        abpt_clusters,
        blobs,
        ng_perturbation: sample_perturbation(&mut rng),
        ok_perturbation: sample_perturbation(&mut rng),
    }
}

/// Marks every pixel within one step of a `true` pixel.
fn dilate(mask: &[bool], width: usize, height: usize) -> Vec<bool> {
    let mut out = mask.to_vec();
    for y in 0..height {
        for x in 0..width {
            if mask[y * width + x] {
                for (dx, dy) in [(-1isize, 0isize), (1, 0), (0, -1), (0, 1)] {
                    let (nx, ny) = (x as isize + dx, y as isize + dy);
                    if nx >= 0 && ny >= 0 && (nx as usize) < width && (ny as usize) < height {
                        out[ny as usize * width + nx as usize] = true;
                    }
                }
            }
        }
    }
    out
}

/// Composites the defects of `layer` onto `pattern` without perturbation:
/// the layer (premultiplied colour and opacity) is blurred, alpha-blended
/// over the pattern, and the result is Poisson-blended back into the
/// pattern over the blurred footprint.
pub fn composite(pattern: &Image, layer: &DefectLayer) -> Result<Image> {
    let (w, h) = pattern.dims();
    if layer.alpha.iter().all(|&a| a == 0.0) {
        return Ok(pattern.clone());
    }
    let mut premul = Vec::with_capacity(w * h * 4);
    for (c, &a) in layer.color.iter().zip(&layer.alpha) {
        premul.extend_from_slice(&[c[0] * a, c[1] * a, c[2] * a, a]);
    }
    let blurred = gaussian_blur(&premul, w, h, 4, DEFECT_BLUR_SIGMA);
    let mut source = pattern.clone();
    let mut footprint = vec![false; w * h];
    for (i, px) in blurred.chunks(4).enumerate() {
        let a = px[3];
        if a > 0.0 {
            footprint[i] = true;
            for (v, &p) in source.data_mut()[i * 3..i * 3 + 3].iter_mut().zip(px) {
                *v = (1.0 - a) * *v + p;
            }
        }
    }
    let region = dilate(&footprint, w, h);
    poisson_blend_padded(&source, pattern, &region)
}

/// Renders the sample described by `spec` on `pattern`.
pub fn synthesize_sample(pattern: &Image, spec: &SynthesisSpec) -> Result<SynthSample> {
    let (w, h) = pattern.dims();
    let layer = DefectLayer::render(w, h, &spec.lines, &spec.blobs);
    let blended = composite(pattern, &layer)?;
    Ok(SynthSample {
        ng: apply_perturbations(&blended, &spec.ng_perturbation)?,
        ok: apply_perturbations(pattern, &spec.ok_perturbation)?,
        mask: LabelMask::new(w, h, layer.class),
        spec: spec.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synlcd::patterns::display_pattern;

    #[test]
    fn class_sets_per_type() {
        let pat = display_pattern(1, 64, 64, 0);
        let s = synthesize_sample(&pat, &sample_spec(&pat, "p", DefectType::Line, 3)).unwrap();
        assert_eq!(s.mask.classes(), vec![0, 1]);
        let s = synthesize_sample(&pat, &sample_spec(&pat, "p", DefectType::Mixed, 3)).unwrap();
        assert_eq!(s.mask.classes(), vec![0, 1, 2]);
    }

    #[test]
    fn zero_defects_leave_a_perturbed_pattern() {
        let pat = display_pattern(3, 32, 32, 0);
        let mut spec = sample_spec(&pat, "p", DefectType::Line, 9);
        spec.lines.clear();
        spec.line_areas = 0;
        let s = synthesize_sample(&pat, &spec).unwrap();
        assert_eq!(
            s.ng,
            apply_perturbations(&pat, &spec.ng_perturbation).unwrap()
        );
        assert_eq!(s.mask.count(0), 32 * 32);
    }

    #[test]
    fn regeneration_is_identical() {
        let pat = display_pattern(8, 48, 32, 5);
        let a = synthesize_sample(&pat, &sample_spec(&pat, "p", DefectType::Mixed, 77)).unwrap();
        let b = synthesize_sample(&pat, &sample_spec(&pat, "p", DefectType::Mixed, 77)).unwrap();
        assert_eq!(a, b);
    }
}
