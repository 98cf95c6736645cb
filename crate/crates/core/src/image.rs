//! In-memory RGB images and label masks, with PNG round-tripping.

use std::path::Path;

use crate::error::{Error, Result};

/// Interleaved RGB image with `f64` samples, row-major `[H, W, 3]`.
///
/// Pixel values are nominally in `0..=255` until normalisation.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl Image {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), width * height * 3, "image buffer size");
        Self {
            width,
            height,
            data,
        }
    }

    pub fn filled(width: usize, height: usize, rgb: [f64; 3]) -> Self {
        let mut data = Vec::with_capacity(width * height * 3);
        for _ in 0..width * height {
            data.extend_from_slice(&rgb);
        }
        Self::new(width, height, data)
    }

    pub fn from_fn(
        width: usize,
        height: usize,
        mut f: impl FnMut(usize, usize) -> [f64; 3],
    ) -> Self {
        let mut data = Vec::with_capacity(width * height * 3);
        for y in 0..height {
            for x in 0..width {
                data.extend_from_slice(&f(x, y));
            }
        }
        Self::new(width, height, data)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn pixel(&self, x: usize, y: usize) -> [f64; 3] {
        let o = (y * self.width + x) * 3;
        [self.data[o], self.data[o + 1], self.data[o + 2]]
    }

    pub fn set_pixel(&mut self, x: usize, y: usize, rgb: [f64; 3]) {
        let o = (y * self.width + x) * 3;
        self.data[o..o + 3].copy_from_slice(&rgb);
    }

    /// ITU-R BT.601 luma.
    pub fn grayscale(&self) -> Vec<f64> {
        self.data
            .chunks(3)
            .map(|p| 0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2])
            .collect()
    }

    /// Rounds and clamps into an 8-bit RGB buffer.
    pub fn to_rgb8(&self) -> image::RgbImage {
        let buf = self
            .data
            .iter()
            .map(|v| v.round().clamp(0.0, 255.0) as u8)
            .collect();
        image::RgbImage::from_raw(self.width as u32, self.height as u32, buf)
            .expect("buffer size matches")
    }

    pub fn from_rgb8(img: &image::RgbImage) -> Self {
        Self::new(
            img.width() as usize,
            img.height() as usize,
            img.as_raw().iter().map(|&v| v as f64).collect(),
        )
    }

    /// Quantises to 8 bits and back, as a PNG round trip would.
    pub fn quantized(&self) -> Self {
        Self {
            width: self.width,
            height: self.height,
            data: self
                .data
                .iter()
                .map(|v| v.round().clamp(0.0, 255.0))
                .collect(),
        }
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        self.to_rgb8().save(path).map_err(|e| Error::Image {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }

    pub fn load_png(path: &Path) -> Result<Self> {
        let img = image::open(path).map_err(|e| Error::Image {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        Ok(Self::from_rgb8(&img.to_rgb8()))
    }

    /// Half-pixel bilinear resize.
    pub fn resize_bilinear(&self, width: usize, height: usize) -> Self {
        if (width, height) == (self.width, self.height) {
            return self.clone();
        }
        let tx = taps(self.width, width);
        let ty = taps(self.height, height);
        let mut out = Vec::with_capacity(width * height * 3);
        for &(y0, y1, fy) in &ty {
            for &(x0, x1, fx) in &tx {
                let p00 = self.pixel(x0, y0);
                let p01 = self.pixel(x1, y0);
                let p10 = self.pixel(x0, y1);
                let p11 = self.pixel(x1, y1);
                for c in 0..3 {
                    let top = p00[c] * (1.0 - fx) + p01[c] * fx;
                    let bot = p10[c] * (1.0 - fx) + p11[c] * fx;
                    out.push(top * (1.0 - fy) + bot * fy);
                }
            }
        }
        Self::new(width, height, out)
    }

    pub fn crop(&self, x0: usize, y0: usize, width: usize, height: usize) -> Self {
        assert!(
            x0 + width <= self.width && y0 + height <= self.height,
            "crop out of bounds"
        );
        let mut out = Vec::with_capacity(width * height * 3);
        for y in y0..y0 + height {
            let o = (y * self.width + x0) * 3;
            out.extend_from_slice(&self.data[o..o + width * 3]);
        }
        Self::new(width, height, out)
    }

    pub fn flip_horizontal(&self) -> Self {
        Self::from_fn(self.width, self.height, |x, y| {
            self.pixel(self.width - 1 - x, y)
        })
    }
}

fn taps(src: usize, dst: usize) -> Vec<(usize, usize, f64)> {
    let scale = src as f64 / dst as f64;
    (0..dst)
        .map(|o| {
            let pos = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
            let i0 = (pos.floor() as usize).min(src - 1);
            let i1 = (i0 + 1).min(src - 1);
            (i0, i1, pos - i0 as f64)
        })
        .collect()
}

/// Per-pixel class ids; 0 is background.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelMask {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl LabelMask {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Self {
        assert_eq!(data.len(), width * height, "mask buffer size");
        Self {
            width,
            height,
            data,
        }
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        Self::new(width, height, vec![0; width * height])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [u8] {
        &mut self.data
    }

    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.data[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, class: u8) {
        self.data[y * self.width + x] = class;
    }

    pub fn max_class(&self) -> u8 {
        self.data.iter().copied().max().unwrap_or(0)
    }

    /// Sorted distinct class ids present.
    pub fn classes(&self) -> Vec<u8> {
        let mut seen = [false; 256];
        for &v in &self.data {
            seen[v as usize] = true;
        }
        (0..=255u8).filter(|&c| seen[c as usize]).collect()
    }

    pub fn count(&self, class: u8) -> usize {
        self.data.iter().filter(|&&v| v == class).count()
    }

    /// Nearest-neighbour resize sampling source pixel centres, so class ids
    /// are never interpolated.
    pub fn resize_nearest(&self, width: usize, height: usize) -> Self {
        if (width, height) == (self.width, self.height) {
            return self.clone();
        }
        let sx = self.width as f64 / width as f64;
        let sy = self.height as f64 / height as f64;
        let mut out = Vec::with_capacity(width * height);
        for y in 0..height {
            let src_y = (((y as f64 + 0.5) * sy) as usize).min(self.height - 1);
            for x in 0..width {
                let src_x = (((x as f64 + 0.5) * sx) as usize).min(self.width - 1);
                out.push(self.data[src_y * self.width + src_x]);
            }
        }
        Self::new(width, height, out)
    }

    pub fn crop(&self, x0: usize, y0: usize, width: usize, height: usize) -> Self {
        assert!(
            x0 + width <= self.width && y0 + height <= self.height,
            "crop out of bounds"
        );
        let mut out = Vec::with_capacity(width * height);
        for y in y0..y0 + height {
            let o = y * self.width + x0;
            out.extend_from_slice(&self.data[o..o + width]);
        }
        Self::new(width, height, out)
    }

    pub fn flip_horizontal(&self) -> Self {
        let mut out = Vec::with_capacity(self.data.len());
        for row in self.data.chunks(self.width) {
            out.extend(row.iter().rev());
        }
        Self::new(self.width, self.height, out)
    }

    /// Single-channel 8-bit PNG holding raw class ids.
    pub fn save_png(&self, path: &Path) -> Result<()> {
        image::GrayImage::from_raw(self.width as u32, self.height as u32, self.data.clone())
            .expect("buffer size matches")
            .save(path)
            .map_err(|e| Error::Image {
                path: path.to_path_buf(),
                message: e.to_string(),
            })
    }

    pub fn load_png(path: &Path) -> Result<Self> {
        let img = image::open(path).map_err(|e| Error::Image {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        let gray = img.to_luma8();
        Ok(Self::new(
            gray.width() as usize,
            gray.height() as usize,
            gray.into_raw(),
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nearest_resize_keeps_class_set() {
        let mut m = LabelMask::zeros(8, 8);
        for y in 0..8 {
            m.set(3, y, 1);
            m.set(6, y, 2);
        }
        let small = m.resize_nearest(4, 4);
        assert!(small.classes().iter().all(|c| [0, 1, 2].contains(c)));
        let big = m.resize_nearest(13, 11);
        assert_eq!(big.classes(), vec![0, 1, 2]);
    }

    #[test]
    fn bilinear_resize_of_constant_is_constant() {
        let img = Image::filled(5, 3, [10.0, 20.0, 30.0]);
        let r = img.resize_bilinear(17, 9);
        assert!(r.data().chunks(3).all(|p| p == [10.0, 20.0, 30.0]));
    }

    #[test]
    fn flips_are_involutions() {
        let img = Image::from_fn(4, 2, |x, y| [x as f64, y as f64, 0.0]);
        assert_eq!(img.flip_horizontal().flip_horizontal(), img);
        assert_eq!(img.flip_horizontal().pixel(0, 1), [3.0, 1.0, 0.0]);
    }
}
