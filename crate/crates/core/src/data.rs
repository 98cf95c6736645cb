//! Paired datasets, joint augmentation and label-fraction splits.
//!
//! A dataset directory holds `ng/`, `ok/` and `mask/` folders of PNGs.
//! `ng/X.png` pairs with `ok/X.png`, or, when that file is absent, with
//! `ok/<pattern-id>.png` where the pattern id is the part of `X` before the
//! first `_`. Masks are single-channel class ids.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use siamdefect_grad::Tensor;

use crate::error::{Error, Result};
use crate::image::{Image, LabelMask};

/// An aligned defective/reference image pair with its labels.
#[derive(Debug, Clone, PartialEq)]
pub struct ImagePair {
    pub ng: Image,
    pub ok: Image,
    pub mask: LabelMask,
    pub pattern_id: String,
    pub sample_id: String,
}

impl ImagePair {
    /// Checks sizes and class ids.
    pub fn validate(&self, num_classes: usize) -> Result<()> {
        let (w, h) = self.ng.dims();
        if self.ok.dims() != (w, h) || self.mask.dims() != (w, h) {
            return Err(Error::Dataset(format!(
                "sample {}: NG {:?}, OK {:?} and mask {:?} sizes differ",
                self.sample_id,
                self.ng.dims(),
                self.ok.dims(),
                self.mask.dims()
            )));
        }
        let top = self.mask.max_class() as usize;
        if top >= num_classes {
            return Err(Error::Dataset(format!(
                "sample {}: mask value {top} is not below num_classes={num_classes}",
                self.sample_id
            )));
        }
        Ok(())
    }
}

/// File locations of one pair.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PairPaths {
    pub sample_id: String,
    pub pattern_id: String,
    pub ng: PathBuf,
    pub ok: PathBuf,
    pub mask: PathBuf,
}

/// Pattern id of a sample stem: everything before the first `_`.
pub fn pattern_of(stem: &str) -> &str {
    stem.split('_').next().unwrap_or(stem)
}

/// Lists the pairs of a `{ng,ok,mask}` directory in file-name order.
pub fn index_pairs(dir: &Path) -> Result<Vec<PairPaths>> {
    let ng_dir = dir.join("ng");
    let mut stems: Vec<String> = fs::read_dir(&ng_dir)
        .map_err(|e| Error::io(&ng_dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "png"))
        .map(|p| p.file_stem().unwrap().to_string_lossy().into_owned())
        .collect();
    stems.sort();
    stems
        .into_iter()
        .map(|stem| {
            let file = format!("{stem}.png");
            let pattern_id = pattern_of(&stem).to_string();
            let mask = dir.join("mask").join(&file);
            if !mask.is_file() {
                return Err(Error::Dataset(format!("missing mask {}", mask.display())));
            }
            let own = dir.join("ok").join(&file);
            let ok = if own.is_file() {
                own
            } else {
                let shared = dir.join("ok").join(format!("{pattern_id}.png"));
                if !shared.is_file() {
                    return Err(Error::Dataset(format!(
                        "missing OK reference for {stem}: neither {} nor {} exists",
                        own.display(),
                        shared.display()
                    )));
                }
                shared
            };
            Ok(PairPaths {
                ng: dir.join("ng").join(&file),
                sample_id: stem,
                pattern_id,
                ok,
                mask,
            })
        })
        .collect()
}

pub fn load_pair(paths: &PairPaths, num_classes: usize) -> Result<ImagePair> {
    let pair = ImagePair {
        ng: Image::load_png(&paths.ng)?,
        ok: Image::load_png(&paths.ok)?,
        mask: LabelMask::load_png(&paths.mask)?,
        pattern_id: paths.pattern_id.clone(),
        sample_id: paths.sample_id.clone(),
    };
    pair.validate(num_classes)?;
    Ok(pair)
}

/// Loads every pair under `root/split` (or `root` itself when `split` is
/// `None`), in file-name order.
pub fn load_pairs(root: &Path, split: Option<&str>, num_classes: usize) -> Result<Vec<ImagePair>> {
    let dir = match split {
        Some(s) => root.join(s),
        None => root.to_path_buf(),
    };
    index_pairs(&dir)?
        .iter()
        .map(|p| load_pair(p, num_classes))
        .collect()
}

/// Keeps pairs whose mask only uses `allowed` defect classes; pixels of any
/// other class are not tolerated. Background is always allowed.
pub fn filter_classes(pairs: Vec<ImagePair>, allowed: &BTreeSet<u8>) -> Vec<ImagePair> {
    pairs
        .into_iter()
        .filter(|p| {
            p.mask
                .classes()
                .iter()
                .all(|c| *c == 0 || allowed.contains(c))
        })
        .collect()
}

/// Maps every defect class to 1, for defect-vs-background evaluation.
pub fn binarize_mask(mask: &LabelMask) -> LabelMask {
    LabelMask::new(
        mask.width(),
        mask.height(),
        mask.data().iter().map(|&v| (v > 0) as u8).collect(),
    )
}

/// Normalises a 0..255 image into an `[H, W, 3]` tensor.
pub fn to_tensor(image: &Image, mean: &[f64; 3], std: &[f64; 3]) -> Tensor {
    let (w, h) = image.dims();
    Tensor::from_fn([h, w, 3], |i| (image.data()[i] - mean[i % 3]) / std[i % 3])
}

/// Largest upscale factor applied before random cropping.
pub const MAX_RESIZE_SCALE: f64 = 1.25;

/// One sampled geometric transform.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentParams {
    /// Intermediate size `(width, height)` after resizing.
    pub resized: (usize, usize),
    /// Top-left corner of the crop in the resized image.
    pub crop: (usize, usize),
    pub flip: bool,
}

impl AugmentParams {
    /// Resize straight to the output size, no crop, no flip.
    pub fn identity(width: usize, height: usize) -> Self {
        Self {
            resized: (width, height),
            crop: (0, 0),
            flip: false,
        }
    }

    /// Upscales by a random factor in `[1, MAX_RESIZE_SCALE]`, crops a
    /// random window of the output size, and flips with probability 1/2.
    pub fn sample<R: Rng + ?Sized>(width: usize, height: usize, rng: &mut R) -> Self {
        let s = rng.random_range(1.0..=MAX_RESIZE_SCALE);
        let rw = ((width as f64 * s).round() as usize).max(width);
        let rh = ((height as f64 * s).round() as usize).max(height);
        Self {
            resized: (rw, rh),
            crop: (
                rng.random_range(0..=rw - width),
                rng.random_range(0..=rh - height),
            ),
            flip: rng.random_bool(0.5),
        }
    }
}

/// A pair ready for the network.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub ng: Tensor,
    pub ok: Tensor,
    pub mask: LabelMask,
}

/// Geometric part of augmentation, applied identically to all three arrays
/// (nearest neighbour for the mask).
pub fn transform_pair(
    pair: &ImagePair,
    width: usize,
    height: usize,
    p: &AugmentParams,
) -> (Image, Image, LabelMask) {
    let (rw, rh) = p.resized;
    let (cx, cy) = p.crop;
    let img = |i: &Image| {
        let r = i.resize_bilinear(rw, rh).crop(cx, cy, width, height);
        if p.flip {
            r.flip_horizontal()
        } else {
            r
        }
    };
    let m = pair.mask.resize_nearest(rw, rh).crop(cx, cy, width, height);
    let m = if p.flip { m.flip_horizontal() } else { m };
    (img(&pair.ng), img(&pair.ok), m)
}

/// Geometric transform followed by normalisation of the two images.
pub fn augment(
    pair: &ImagePair,
    size: [usize; 2],
    params: &AugmentParams,
    mean: &[f64; 3],
    std: &[f64; 3],
) -> Sample {
    let [h, w] = size;
    let (ng, ok, mask) = transform_pair(pair, w, h, params);
    Sample {
        ng: to_tensor(&ng, mean, std),
        ok: to_tensor(&ok, mean, std),
        mask,
    }
}

/// Labeled/unlabeled partition of sample ids.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitPlan {
    pub labeled: BTreeSet<usize>,
    pub unlabeled: BTreeSet<usize>,
    pub fraction: f64,
}

/// Seeded uniform choice of `round(fraction * n)` labeled ids.
pub fn make_split(ids: &[usize], fraction: f64, seed: u64) -> Result<SplitPlan> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::InvalidInput(format!(
            "fraction {fraction} must lie in [0, 1]"
        )));
    }
    let k = (fraction * ids.len() as f64).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let chosen: BTreeSet<usize> = sample(&mut rng, ids.len(), k).iter().collect();
    let mut plan = SplitPlan {
        labeled: BTreeSet::new(),
        unlabeled: BTreeSet::new(),
        fraction,
    };
    for (i, &id) in ids.iter().enumerate() {
        if chosen.contains(&i) {
            plan.labeled.insert(id);
        } else {
            plan.unlabeled.insert(id);
        }
    }
    Ok(plan)
}
