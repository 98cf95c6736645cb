//! Defect geometry: sampling, rasterisation, and the abnormal-point
//! clustering on pattern edges.

use rand::seq::index::sample;
use rand::Rng;

use super::spec::{ranges, BlobDefect, DefectColor, LineDefect};
use crate::image::Image;

/// Class id written for line pixels.
pub const CLASS_LINE: u8 = 1;
/// Class id written for abnormal-point pixels.
pub const CLASS_ABPT: u8 = 2;

/// Gray thresholds swept when looking for pattern edges.
pub const EDGE_THRESHOLDS: RangeStep = RangeStep {
    start: 50,
    end: 200,
    step: 10,
};

#[derive(Debug, Clone, Copy)]
pub struct RangeStep {
    pub start: u32,
    pub end: u32,
    pub step: u32,
}

impl RangeStep {
    pub fn values(self) -> impl Iterator<Item = u32> {
        (self.start..=self.end).step_by(self.step as usize)
    }
}

/// Lloyd iteration cap.
pub const KMEANS_MAX_ITERS: usize = 50;

fn random_color<R: Rng + ?Sized>(rng: &mut R) -> DefectColor {
    DefectColor::ALL[rng.random_range(0..DefectColor::ALL.len())]
}

fn random_opacity<R: Rng + ?Sized>(rng: &mut R) -> u32 {
    rng.random_range(ranges::OPACITY_TENTHS)
}

/// One line per vertical strip of a `width`-wide image split into `k`
/// strips. Lines run top to bottom with a bounded horizontal drift and stay
/// inside their strip whenever the strip is wide enough.
pub fn sample_lines<R: Rng + ?Sized>(width: usize, k: usize, rng: &mut R) -> Vec<LineDefect> {
    let strip = width as f64 / k.max(1) as f64;
    (0..k)
        .map(|i| {
            let lw = rng.random_range(ranges::LINE_WIDTH);
            let left = i as f64 * strip;
            let half = lw as f64 / 2.0;
            let (lo, hi) = if strip > lw as f64 + 2.0 {
                (left + half + 1.0, left + strip - half - 1.0)
            } else {
                let c = left + strip / 2.0;
                (c, c)
            };
            let x_top = if hi > lo {
                rng.random_range(lo..hi)
            } else {
                lo
            };
            let drift = (strip / 8.0).min(8.0);
            let x_bottom = if hi > lo {
                (x_top + rng.random_range(-drift..=drift)).clamp(lo, hi)
            } else {
                x_top
            };
            LineDefect {
                x_top,
                x_bottom,
                width: lw,
                color: random_color(rng),
                opacity_tenths: random_opacity(rng),
            }
        })
        .collect()
}

/// Pixels on the boundary of any thresholded segmentation of the gray
/// image, for thresholds 50, 60, ..., 200. A pixel is a boundary pixel when
/// its right or lower neighbour falls on the other side of a threshold.
pub fn edge_points(image: &Image) -> Vec<(usize, usize)> {
    let (w, h) = image.dims();
    let gray = image.grayscale();
    let mut hit = vec![false; w * h];
    for t in EDGE_THRESHOLDS.values() {
        let t = t as f64;
        let above = |i: usize| gray[i] >= t;
        for y in 0..h {
            for x in 0..w {
                let i = y * w + x;
                let right = x + 1 < w && above(i) != above(i + 1);
                let down = y + 1 < h && above(i) != above(i + w);
                if right || down {
                    hit[i] = true;
                }
            }
        }
    }
    (0..w * h)
        .filter(|&i| hit[i])
        .map(|i| (i % w, i / w))
        .collect()
}

/// Result of Lloyd's algorithm.
#[derive(Debug, Clone, PartialEq)]
pub struct Clustering {
    pub centroids: Vec<(f64, f64)>,
    pub assignment: Vec<usize>,
    pub iterations: usize,
}

/// Index of the nearest centroid, lowest index on ties.
pub fn nearest(p: (f64, f64), centroids: &[(f64, f64)]) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (j, c) in centroids.iter().enumerate() {
        let d = (p.0 - c.0).powi(2) + (p.1 - c.1).powi(2);
        if d < best_d {
            best_d = d;
            best = j;
        }
    }
    best
}

/// K-means with `k` distinct data points as seeds. `k` is capped at the
/// number of points. Empty clusters keep their previous centroid.
pub fn kmeans<R: Rng + ?Sized>(points: &[(f64, f64)], k: usize, rng: &mut R) -> Clustering {
    let k = k.min(points.len());
    if k == 0 {
        return Clustering {
            centroids: Vec::new(),
            assignment: vec![0; points.len()],
            iterations: 0,
        };
    }
    let mut centroids: Vec<(f64, f64)> = sample(rng, points.len(), k)
        .iter()
        .map(|i| points[i])
        .collect();
    let mut assignment: Vec<usize> = points.iter().map(|&p| nearest(p, &centroids)).collect();
    let mut iterations = 0;
    while iterations < KMEANS_MAX_ITERS {
        iterations += 1;
        let mut sums = vec![(0.0, 0.0, 0usize); k];
        for (p, &a) in points.iter().zip(&assignment) {
            sums[a].0 += p.0;
            sums[a].1 += p.1;
            sums[a].2 += 1;
        }
        for (c, s) in centroids.iter_mut().zip(&sums) {
            if s.2 > 0 {
                *c = (s.0 / s.2 as f64, s.1 / s.2 as f64);
            }
        }
        let next: Vec<usize> = points.iter().map(|&p| nearest(p, &centroids)).collect();
        if next == assignment {
            break;
        }
        assignment = next;
    }
    Clustering {
        centroids,
        assignment,
        iterations,
    }
}

/// Largest blob radius for an image of the given size.
pub fn max_blob_radius(width: usize, height: usize) -> f64 {
    (width.min(height) as f64 / 32.0).max(ranges::BLOB_RADIUS_MIN + 0.5)
}

/// Abnormal points: cluster the pattern's edge pixels into `clusters`
/// groups and put one blob at each centroid. Returns no blobs when the
/// pattern has no edges.
pub fn sample_blobs<R: Rng + ?Sized>(
    pattern: &Image,
    clusters: usize,
    rng: &mut R,
) -> Vec<BlobDefect> {
    let pts: Vec<(f64, f64)> = edge_points(pattern)
        .into_iter()
        .map(|(x, y)| (x as f64 + 0.5, y as f64 + 0.5))
        .collect();
    let c = kmeans(&pts, clusters, rng);
    let (w, h) = pattern.dims();
    let rmax = max_blob_radius(w, h);
    c.centroids
        .iter()
        .map(|&(cx, cy)| BlobDefect {
            cx,
            cy,
            radius: rng.random_range(ranges::BLOB_RADIUS_MIN..=rmax),
            color: random_color(rng),
            opacity_tenths: random_opacity(rng),
        })
        .collect()
}

/// Rasterised defects before blurring: per-pixel RGB, opacity and class.
/// Later shapes paint over earlier ones (blobs over lines).
#[derive(Debug, Clone, PartialEq)]
pub struct DefectLayer {
    pub width: usize,
    pub height: usize,
    pub color: Vec<[f64; 3]>,
    pub alpha: Vec<f64>,
    pub class: Vec<u8>,
}

impl DefectLayer {
    pub fn empty(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            color: vec![[0.0; 3]; width * height],
            alpha: vec![0.0; width * height],
            class: vec![0; width * height],
        }
    }

    pub fn render(width: usize, height: usize, lines: &[LineDefect], blobs: &[BlobDefect]) -> Self {
        let mut layer = Self::empty(width, height);
        for l in lines {
            for y in 0..height {
                for x in 0..width {
                    if l.covers(x, y, height) {
                        layer.paint(x, y, l.color, l.opacity(), CLASS_LINE);
                    }
                }
            }
        }
        for b in blobs {
            let x0 = (b.cx - b.radius).floor().max(0.0) as usize;
            let y0 = (b.cy - b.radius).floor().max(0.0) as usize;
            let x1 = ((b.cx + b.radius).ceil() as usize).min(width);
            let y1 = ((b.cy + b.radius).ceil() as usize).min(height);
            for y in y0..y1 {
                for x in x0..x1 {
                    if b.covers(x, y) {
                        layer.paint(x, y, b.color, b.opacity(), CLASS_ABPT);
                    }
                }
            }
        }
        layer
    }

    fn paint(&mut self, x: usize, y: usize, color: DefectColor, opacity: f64, class: u8) {
        let i = y * self.width + x;
        self.color[i] = color.rgb();
        self.alpha[i] = opacity;
        self.class[i] = class;
    }
}

/// Sampled Gaussian kernel of radius `ceil(3 sigma)`, normalised to sum 1.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let r = (3.0 * sigma).ceil() as isize;
    let k: Vec<f64> = (-r..=r)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = k.iter().sum();
    k.into_iter().map(|v| v / s).collect()
}

/// Separable Gaussian blur of a `width x height x channels` buffer with
/// clamped edges.
pub fn gaussian_blur(
    data: &[f64],
    width: usize,
    height: usize,
    channels: usize,
    sigma: f64,
) -> Vec<f64> {
    if sigma <= 0.0 {
        return data.to_vec();
    }
    let k = gaussian_kernel(sigma);
    let r = (k.len() / 2) as isize;
    let clamp = |v: isize, n: usize| v.clamp(0, n as isize - 1) as usize;
    let mut tmp = vec![0.0; data.len()];
    for y in 0..height {
        for x in 0..width {
            for c in 0..channels {
                let mut s = 0.0;
                for (j, kv) in k.iter().enumerate() {
                    let xs = clamp(x as isize + j as isize - r, width);
                    s += kv * data[(y * width + xs) * channels + c];
                }
                tmp[(y * width + x) * channels + c] = s;
            }
        }
    }
    let mut out = vec![0.0; data.len()];
    for y in 0..height {
        for x in 0..width {
            for c in 0..channels {
                let mut s = 0.0;
                for (j, kv) in k.iter().enumerate() {
                    let ys = clamp(y as isize + j as isize - r, height);
                    s += kv * tmp[(ys * width + x) * channels + c];
                }
                out[(y * width + x) * channels + c] = s;
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn uniform_image_has_no_edges() {
        let img = Image::filled(16, 16, [120.0; 3]);
        assert!(edge_points(&img).is_empty());
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(sample_blobs(&img, 3, &mut rng).is_empty());
    }

    #[test]
    fn kmeans_separates_obvious_groups() {
        let mut pts = Vec::new();
        for i in 0..10 {
            pts.push((i as f64 * 0.1, 0.0));
            pts.push((100.0 + i as f64 * 0.1, 50.0));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let c = kmeans(&pts, 2, &mut rng);
        let mut cs = c.centroids.clone();
        cs.sort_by(|a, b| a.0.total_cmp(&b.0));
        assert!((cs[0].0 - 0.45).abs() < 1e-9 && (cs[1].0 - 100.45).abs() < 1e-9);
    }

    #[test]
    fn kmeans_caps_k_and_breaks_ties_low() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(kmeans(&[(1.0, 1.0)], 4, &mut rng).centroids.len(), 1);
        assert_eq!(nearest((0.0, 0.0), &[(1.0, 0.0), (-1.0, 0.0)]), 0);
    }

    #[test]
    fn blur_preserves_constants_and_mass() {
        let d = vec![3.0; 5 * 4 * 2];
        assert!(gaussian_blur(&d, 5, 4, 2, 1.0)
            .iter()
            .all(|v| (v - 3.0).abs() < 1e-12));
        let k = gaussian_kernel(1.0);
        assert_eq!(k.len(), 7);
        assert!((k.iter().sum::<f64>() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn line_width_in_pixels() {
        let l = LineDefect {
            x_top: 10.5,
            x_bottom: 10.5,
            width: 5,
            color: DefectColor::Red,
            opacity_tenths: 5,
        };
        let layer = DefectLayer::render(32, 4, &[l], &[]);
        for y in 0..4 {
            let n = (0..32)
                .filter(|&x| layer.class[y * 32 + x] == CLASS_LINE)
                .count();
            assert_eq!(n, 5);
        }
    }
}
