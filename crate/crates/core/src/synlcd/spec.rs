//! Randomised parameters of one synthetic sample and their legal ranges.

use std::ops::RangeInclusive;

use serde::{Deserialize, Serialize};

/// Legal attribute ranges for generated samples.
pub mod ranges {
    use super::RangeInclusive;

    pub const LINE_WIDTH: RangeInclusive<usize> = 3..=33;
    /// Opacity in tenths: 10% to 100%.
    pub const OPACITY_TENTHS: RangeInclusive<u32> = 1..=10;
    pub const BRIGHTNESS_BIAS: RangeInclusive<u32> = 1..=6;
    /// Contrast gain in tenths: 0.5 to 1.5.
    pub const CONTRAST_TENTHS: RangeInclusive<u32> = 5..=15;
    pub const ISO_NOISE: RangeInclusive<f64> = 0.1..=1.0;
    /// Per-channel deviation bound in gray levels, in steps of 3.
    pub const RGB_DEVIATION: RangeInclusive<u32> = 3..=33;
    pub const RGB_DEVIATION_STEP: u32 = 3;
    /// Number of vertical strips (one line each) for line samples.
    pub const LINE_AREAS: RangeInclusive<usize> = 1..=4;
    /// K-means clusters for abnormal-point samples.
    pub const ABPT_CLUSTERS: RangeInclusive<usize> = 2..=6;
    /// Blob radius in pixels; the upper end also scales with image size.
    pub const BLOB_RADIUS_MIN: f64 = 1.5;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DefectType {
    Line,
    Abpt,
    Mixed,
}

impl DefectType {
    pub const ALL: [DefectType; 3] = [DefectType::Line, DefectType::Abpt, DefectType::Mixed];

    pub fn name(self) -> &'static str {
        match self {
            DefectType::Line => "line",
            DefectType::Abpt => "abpt",
            DefectType::Mixed => "mixed",
        }
    }

    pub fn has_lines(self) -> bool {
        matches!(self, DefectType::Line | DefectType::Mixed)
    }

    pub fn has_abpt(self) -> bool {
        matches!(self, DefectType::Abpt | DefectType::Mixed)
    }
}

impl std::str::FromStr for DefectType {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "line" => Ok(DefectType::Line),
            "abpt" => Ok(DefectType::Abpt),
            "mixed" => Ok(DefectType::Mixed),
            other => Err(format!("unknown defect type `{other}` (line, abpt, mixed)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DefectColor {
    Black,
    White,
    Red,
    Green,
    Blue,
}

impl DefectColor {
    pub const ALL: [DefectColor; 5] = [
        DefectColor::Black,
        DefectColor::White,
        DefectColor::Red,
        DefectColor::Green,
        DefectColor::Blue,
    ];

    pub fn rgb(self) -> [f64; 3] {
        match self {
            DefectColor::Black => [0.0, 0.0, 0.0],
            DefectColor::White => [255.0, 255.0, 255.0],
            DefectColor::Red => [255.0, 0.0, 0.0],
            DefectColor::Green => [0.0, 255.0, 0.0],
            DefectColor::Blue => [0.0, 0.0, 255.0],
        }
    }
}

/// A straight screen-spanning line from `(x_top, 0)` to `(x_bottom, H)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LineDefect {
    pub x_top: f64,
    pub x_bottom: f64,
    pub width: usize,
    pub color: DefectColor,
    /// Tenths of full opacity.
    pub opacity_tenths: u32,
}

impl LineDefect {
    pub fn opacity(&self) -> f64 {
        self.opacity_tenths as f64 / 10.0
    }

    /// Whether the pixel centred at `(x + 0.5, y + 0.5)` is covered.
    pub fn covers(&self, x: usize, y: usize, height: usize) -> bool {
        let t = (y as f64 + 0.5) / height as f64;
        let xc = self.x_top + (self.x_bottom - self.x_top) * t;
        (x as f64 + 0.5 - xc).abs() < self.width as f64 / 2.0
    }
}

/// A filled disc.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlobDefect {
    pub cx: f64,
    pub cy: f64,
    pub radius: f64,
    pub color: DefectColor,
    pub opacity_tenths: u32,
}

impl BlobDefect {
    pub fn opacity(&self) -> f64 {
        self.opacity_tenths as f64 / 10.0
    }

    pub fn covers(&self, x: usize, y: usize) -> bool {
        let dx = x as f64 + 0.5 - self.cx;
        let dy = y as f64 + 0.5 - self.cy;
        dx * dx + dy * dy <= self.radius * self.radius
    }
}

/// Global photometric change applied to a whole image.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Perturbation {
    pub brightness_bias: u32,
    /// Tenths of the contrast gain.
    pub contrast_tenths: u32,
    pub iso_noise: f64,
    pub rgb_deviation: u32,
    /// Per-channel offsets, each within `±rgb_deviation`.
    pub channel_offsets: [f64; 3],
    /// Seeds the noise field.
    pub noise_seed: u64,
}

impl Perturbation {
    /// Leaves an image unchanged.
    pub const NEUTRAL: Perturbation = Perturbation {
        brightness_bias: 0,
        contrast_tenths: 10,
        iso_noise: 0.0,
        rgb_deviation: 0,
        channel_offsets: [0.0; 3],
        noise_seed: 0,
    };

    pub fn contrast_alpha(&self) -> f64 {
        self.contrast_tenths as f64 / 10.0
    }

    /// Range violations against the generator's sampling ranges.
    pub fn generated_range_violations(&self, what: &str, out: &mut Vec<String>) {
        if !ranges::BRIGHTNESS_BIAS.contains(&self.brightness_bias) {
            out.push(format!(
                "{what}: brightness_bias {} outside 1..=6",
                self.brightness_bias
            ));
        }
        if !ranges::CONTRAST_TENTHS.contains(&self.contrast_tenths) {
            out.push(format!(
                "{what}: contrast alpha {} outside 0.5..=1.5",
                self.contrast_alpha()
            ));
        }
        if !ranges::ISO_NOISE.contains(&self.iso_noise) {
            out.push(format!(
                "{what}: iso_noise {} outside 0.1..=1.0",
                self.iso_noise
            ));
        }
        if !ranges::RGB_DEVIATION.contains(&self.rgb_deviation)
            || !self
                .rgb_deviation
                .is_multiple_of(ranges::RGB_DEVIATION_STEP)
        {
            out.push(format!(
                "{what}: rgb_deviation {} not in 3..=33 step 3",
                self.rgb_deviation
            ));
        }
        self.offset_violations(what, out);
    }

    /// Violations of the looser bounds accepted when applying a
    /// perturbation, which also admit the neutral values.
    pub fn applicable_violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.brightness_bias > *ranges::BRIGHTNESS_BIAS.end() {
            out.push(format!(
                "brightness_bias {} exceeds 6",
                self.brightness_bias
            ));
        }
        if !ranges::CONTRAST_TENTHS.contains(&self.contrast_tenths) {
            out.push(format!(
                "contrast alpha {} outside 0.5..=1.5",
                self.contrast_alpha()
            ));
        }
        if !(0.0..=1.0).contains(&self.iso_noise) {
            out.push(format!("iso_noise {} outside 0..=1", self.iso_noise));
        }
        if self.rgb_deviation > *ranges::RGB_DEVIATION.end() {
            out.push(format!("rgb_deviation {} exceeds 33", self.rgb_deviation));
        }
        self.offset_violations("perturbation", &mut out);
        out
    }

    fn offset_violations(&self, what: &str, out: &mut Vec<String>) {
        let dev = self.rgb_deviation as f64;
        if self.channel_offsets.iter().any(|o| !(o.abs() <= dev)) {
            out.push(format!(
                "{what}: channel offsets {:?} exceed ±{dev}",
                self.channel_offsets
            ));
        }
    }
}

/// Everything needed to regenerate one sample from its clean pattern.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthesisSpec {
    pub seed: u64,
    pub pattern_id: String,
    pub defect_type: DefectType,
    /// Number of vertical strips `K`, one line per strip.
    pub line_areas: usize,
    pub lines: Vec<LineDefect>,
    /// Requested K-means cluster count.
    pub abpt_clusters: usize,
    pub blobs: Vec<BlobDefect>,
    pub ng_perturbation: Perturbation,
    pub ok_perturbation: Perturbation,
}

impl SynthesisSpec {
    /// Every attribute outside its generation range.
    pub fn range_violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        for (i, l) in self.lines.iter().enumerate() {
            if !ranges::LINE_WIDTH.contains(&l.width) {
                out.push(format!("line {i}: width {} outside 3..=33", l.width));
            }
            if !ranges::OPACITY_TENTHS.contains(&l.opacity_tenths) {
                out.push(format!(
                    "line {i}: opacity {} outside 0.1..=1.0",
                    l.opacity()
                ));
            }
        }
        for (i, b) in self.blobs.iter().enumerate() {
            if !ranges::OPACITY_TENTHS.contains(&b.opacity_tenths) {
                out.push(format!(
                    "blob {i}: opacity {} outside 0.1..=1.0",
                    b.opacity()
                ));
            }
            if !(b.radius >= ranges::BLOB_RADIUS_MIN) {
                out.push(format!(
                    "blob {i}: radius {} below {}",
                    b.radius,
                    ranges::BLOB_RADIUS_MIN
                ));
            }
        }
        if self.lines.len() != self.line_areas {
            out.push(format!(
                "{} lines for {} areas",
                self.lines.len(),
                self.line_areas
            ));
        }
        if self.defect_type.has_lines() && !ranges::LINE_AREAS.contains(&self.line_areas) {
            out.push(format!("line_areas {} outside 1..=4", self.line_areas));
        }
        if self.defect_type.has_abpt() && !ranges::ABPT_CLUSTERS.contains(&self.abpt_clusters) {
            out.push(format!(
                "abpt_clusters {} outside 2..=6",
                self.abpt_clusters
            ));
        }
        self.ng_perturbation
            .generated_range_violations("ng perturbation", &mut out);
        self.ok_perturbation
            .generated_range_violations("ok perturbation", &mut out);
        out
    }
}
