//! Writing a synthetic dataset to disk.
//!
//! Layout: `<root>/{train,test}/{ng,ok,mask}/<pattern-id>_<type>_<index>.png`
//! plus `<root>/manifest.jsonl` with one [`ManifestEntry`] per line.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::sample::{sample_spec, synthesize_sample, SynthSample};
use super::spec::{DefectType, SynthesisSpec};
use crate::data::ImagePair;
use crate::error::{Error, Result};
use crate::image::Image;

pub const MANIFEST_FILE: &str = "manifest.jsonl";

/// Share of patterns assigned to the training split.
pub const TRAIN_PATTERN_SHARE: f64 = 0.7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn dir_name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split `{other}` (train, test)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub split: Split,
    /// File stem shared by the NG, OK and mask images.
    pub name: String,
    pub spec: SynthesisSpec,
}

/// `<pattern-id>_<type>_<index>`.
pub fn sample_name(pattern_id: &str, defect_type: DefectType, index: usize) -> String {
    format!("{pattern_id}_{}_{index}", defect_type.name())
}

/// SplitMix64 finaliser, used to derive independent per-sample seeds.
pub fn mix_seed(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of one sample, independent of generation order.
pub fn sample_seed(seed: u64, pattern: usize, defect_type: DefectType, index: usize) -> u64 {
    let t = DefectType::ALL
        .iter()
        .position(|&d| d == defect_type)
        .unwrap() as u64;
    let mut s = mix_seed(seed);
    for part in [pattern as u64, t, index as u64] {
        s = mix_seed(s ^ part);
    }
    s
}

/// Which patterns go to training. With one pattern everything trains;
/// otherwise `round(0.7 n)` seeded-random patterns train (at least one, and
/// at least one left for testing). Ten patterns give the 7/3 split.
pub fn pattern_splits(n: usize, seed: u64) -> Vec<Split> {
    if n <= 1 {
        return vec![Split::Train; n];
    }
    let n_train = ((n as f64 * TRAIN_PATTERN_SHARE).round() as usize).clamp(1, n - 1);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(mix_seed(seed ^ 0x5EED)));
    let mut out = vec![Split::Test; n];
    for &i in &order[..n_train] {
        out[i] = Split::Train;
    }
    out
}

/// Writes one sample's three images under `root/split`.
pub fn write_sample(root: &Path, split: Split, name: &str, sample: &SynthSample) -> Result<()> {
    let dir = root.join(split.dir_name());
    for sub in ["ng", "ok", "mask"] {
        let d = dir.join(sub);
        fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
    }
    let file = format!("{name}.png");
    sample.ng.save_png(&dir.join("ng").join(&file))?;
    sample.ok.save_png(&dir.join("ok").join(&file))?;
    sample.mask.save_png(&dir.join("mask").join(&file))
}

/// Options for [`build_dataset`].
#[derive(Debug, Clone)]
pub struct BuildOptions {
    pub per_type_count: usize,
    pub seed: u64,
    pub defect_types: Vec<DefectType>,
}

impl BuildOptions {
    pub fn new(per_type_count: usize, seed: u64) -> Self {
        Self {
            per_type_count,
            seed,
            defect_types: DefectType::ALL.to_vec(),
        }
    }
}

/// Generates `per_type_count` samples of every defect type for every
/// pattern and writes them with a manifest.
pub fn build_dataset(
    patterns: &[(String, Image)],
    out_dir: &Path,
    opts: &BuildOptions,
) -> Result<Vec<ManifestEntry>> {
    if patterns.is_empty() {
        return Err(Error::InvalidInput(
            "at least one pattern is required".into(),
        ));
    }
    for (id, _) in patterns {
        if id.is_empty() || id.contains('_') || id.contains('/') {
            return Err(Error::InvalidInput(format!(
                "pattern id `{id}` must be non-empty without `_` or `/`"
            )));
        }
    }
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let splits = pattern_splits(patterns.len(), opts.seed);
    let mut manifest = Vec::new();
    for (pi, ((id, pattern), &split)) in patterns.iter().zip(&splits).enumerate() {
        for &dt in &opts.defect_types {
            for index in 0..opts.per_type_count {
                let seed = sample_seed(opts.seed, pi, dt, index);
                let spec = sample_spec(pattern, id, dt, seed);
                let sample = synthesize_sample(pattern, &spec)?;
                let name = sample_name(id, dt, index);
                write_sample(out_dir, split, &name, &sample)?;
                manifest.push(ManifestEntry { split, name, spec });
            }
        }
    }
    write_manifest(&out_dir.join(MANIFEST_FILE), &manifest)?;
    Ok(manifest)
}

/// Generates `count` pairs of one defect type in memory, cycling through
/// the patterns. Images are quantised to 8 bits exactly as writing and
/// reloading them would.
pub fn synthesize_pairs(
    patterns: &[(String, Image)],
    defect_type: DefectType,
    count: usize,
    seed: u64,
) -> Result<Vec<ImagePair>> {
    if patterns.is_empty() {
        return Err(Error::InvalidInput(
            "at least one pattern is required".into(),
        ));
    }
    (0..count)
        .map(|index| {
            let pi = index % patterns.len();
            let (id, pattern) = &patterns[pi];
            let spec = sample_spec(
                pattern,
                id,
                defect_type,
                sample_seed(seed, pi, defect_type, index),
            );
            let s = synthesize_sample(pattern, &spec)?;
            Ok(ImagePair {
                ng: s.ng.quantized(),
                ok: s.ok.quantized(),
                mask: s.mask,
                pattern_id: id.clone(),
                sample_id: sample_name(id, defect_type, index),
            })
        })
        .collect()
}

pub fn write_manifest(path: &Path, entries: &[ManifestEntry]) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    for e in entries {
        let line = serde_json::to_string(e).expect("manifest entry serialises");
        writeln!(f, "{line}").map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l)
                .map_err(|e| Error::Dataset(format!("{}:{}: {e}", path.display(), i + 1)))
        })
        .collect()
}

/// Loads every `*.png` in `dir` as a pattern, using the file stem as id.
pub fn load_patterns(dir: &Path) -> Result<Vec<(String, Image)>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("png")))
        .collect();
    files.sort();
    files
        .into_iter()
        .map(|p| {
            let id = p.file_stem().unwrap().to_string_lossy().replace('_', "-");
            Ok((id, Image::load_png(&p)?))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ten_patterns_split_seven_three() {
        let s = pattern_splits(10, 1);
        assert_eq!(s.iter().filter(|&&x| x == Split::Train).count(), 7);
        assert_eq!(pattern_splits(1, 0), vec![Split::Train]);
        let s = pattern_splits(2, 0);
        assert_eq!(s.iter().filter(|&&x| x == Split::Test).count(), 1);
    }

    #[test]
    fn seeds_differ_per_sample() {
        let a = sample_seed(0, 0, DefectType::Line, 0);
        assert_ne!(a, sample_seed(0, 0, DefectType::Line, 1));
        assert_ne!(a, sample_seed(0, 1, DefectType::Line, 0));
        assert_ne!(a, sample_seed(0, 0, DefectType::Abpt, 0));
        assert_ne!(a, sample_seed(1, 0, DefectType::Line, 0));
    }
}
