//! Page images: grayscale and binary rasters, binarization, ink-density
//! profiles, elastic morphing and synthetic word rendering.

mod glyphs;
pub mod io;
mod morph;
mod profile;
mod synth;

pub use glyphs::{GlyphBitmap, GlyphSet};
pub use morph::{elastic_morph, MorphParams};
pub use profile::{ink_profile, moving_average, Axis, InkProfile};
pub use synth::{salt_and_pepper, synth_word, SynthOptions};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Row-major 8-bit luminance raster.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GrayImage {
    width: usize,
    height: usize,
    pixels: Vec<u8>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self> {
        if pixels.len() != width * height {
            return Err(Error::param(format!(
                "pixel buffer has {} entries, expected {}x{}",
                pixels.len(),
                width,
                height
            )));
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    pub fn filled(width: usize, height: usize, value: u8) -> Self {
        Self {
            width,
            height,
            pixels: vec![value; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> u8) -> Self {
        let mut pixels = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                pixels.push(f(x, y));
            }
        }
        Self {
            width,
            height,
            pixels,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.pixels[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, v: u8) {
        self.pixels[y * self.width + x] = v;
    }

    /// Copy of the rectangle `[x, x+w) × [y, y+h)`, clamped to the image.
    pub fn crop(&self, x: usize, y: usize, w: usize, h: usize) -> GrayImage {
        let x1 = (x + w).min(self.width);
        let y1 = (y + h).min(self.height);
        let x0 = x.min(x1);
        let y0 = y.min(y1);
        GrayImage::from_fn(x1 - x0, y1 - y0, |cx, cy| self.get(x0 + cx, y0 + cy))
    }
}

/// Row-major ink mask; `true` marks ink.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BinaryImage {
    width: usize,
    height: usize,
    ink: Vec<bool>,
}

impl BinaryImage {
    pub fn new(width: usize, height: usize, ink: Vec<bool>) -> Result<Self> {
        if ink.len() != width * height {
            return Err(Error::param(format!(
                "mask has {} entries, expected {}x{}",
                ink.len(),
                width,
                height
            )));
        }
        Ok(Self { width, height, ink })
    }

    pub fn blank(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            ink: vec![false; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut ink = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                ink.push(f(x, y));
            }
        }
        Self { width, height, ink }
    }

    /// Parses rows of `#` (ink) and any other character (background).
    pub fn from_ascii(rows: &[&str]) -> Self {
        let height = rows.len();
        let width = rows.iter().map(|r| r.chars().count()).max().unwrap_or(0);
        let mut img = Self::blank(width, height);
        for (y, row) in rows.iter().enumerate() {
            for (x, c) in row.chars().enumerate() {
                if c == '#' {
                    img.set(x, y, true);
                }
            }
        }
        img
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn is_empty(&self) -> bool {
        self.ink.is_empty()
    }

    pub fn ink(&self) -> &[bool] {
        &self.ink
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.ink[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, v: bool) {
        self.ink[y * self.width + x] = v;
    }

    pub fn ink_count(&self) -> usize {
        self.ink.iter().filter(|&&b| b).count()
    }

    /// Tight bounding box of the ink as `(x, y, w, h)`.
    pub fn ink_bbox(&self) -> Option<(usize, usize, usize, usize)> {
        let (mut x0, mut y0, mut x1, mut y1) = (usize::MAX, usize::MAX, 0, 0);
        for y in 0..self.height {
            for x in 0..self.width {
                if self.get(x, y) {
                    x0 = x0.min(x);
                    y0 = y0.min(y);
                    x1 = x1.max(x);
                    y1 = y1.max(y);
                }
            }
        }
        (x0 != usize::MAX).then(|| (x0, y0, x1 - x0 + 1, y1 - y0 + 1))
    }

    pub fn crop(&self, x: usize, y: usize, w: usize, h: usize) -> BinaryImage {
        let x1 = (x + w).min(self.width);
        let y1 = (y + h).min(self.height);
        let x0 = x.min(x1);
        let y0 = y.min(y1);
        BinaryImage::from_fn(x1 - x0, y1 - y0, |cx, cy| self.get(x0 + cx, y0 + cy))
    }

    /// Surrounds the mask with `pad` background pixels on every side.
    pub fn padded(&self, pad: usize) -> BinaryImage {
        let mut out = BinaryImage::blank(self.width + 2 * pad, self.height + 2 * pad);
        for y in 0..self.height {
            for x in 0..self.width {
                if self.get(x, y) {
                    out.set(x + pad, y + pad, true);
                }
            }
        }
        out
    }

    pub fn flip_horizontal(&self) -> BinaryImage {
        BinaryImage::from_fn(self.width, self.height, |x, y| {
            self.get(self.width - 1 - x, y)
        })
    }

    /// 0 for ink, 255 for background.
    pub fn to_gray(&self) -> GrayImage {
        GrayImage {
            width: self.width,
            height: self.height,
            pixels: self.ink.iter().map(|&b| if b { 0 } else { 255 }).collect(),
        }
    }
}

/// Otsu threshold: the `t` maximizing between-class variance of the split
/// `{v <= t}` / `{v > t}`. Ties resolve to the smallest `t`.
pub fn otsu_threshold(img: &GrayImage) -> Result<u8> {
    if img.is_empty() {
        return Err(Error::domain("empty image"));
    }
    let mut hist = [0u64; 256];
    for &p in img.pixels() {
        hist[p as usize] += 1;
    }
    let total_n = img.pixels().len() as i128;
    let total_s: i128 = hist
        .iter()
        .enumerate()
        .map(|(v, &c)| v as i128 * c as i128)
        .sum();

    let mut best_t = 0u8;
    let mut best = -1.0f64;
    let (mut n0, mut s0) = (0i128, 0i128);
    for t in 0..256usize {
        n0 += hist[t] as i128;
        s0 += t as i128 * hist[t] as i128;
        let n1 = total_n - n0;
        let s1 = total_s - s0;
        let score = if n0 == 0 || n1 == 0 {
            0.0
        } else {
            // n0*n1*(mu0-mu1)^2 == (s0*n1 - s1*n0)^2 / (n0*n1)
            let num = (s0 * n1 - s1 * n0) as f64;
            num * num / (n0 as f64 * n1 as f64)
        };
        if score > best {
            best = score;
            best_t = t as u8;
        }
    }
    Ok(best_t)
}

/// Global Otsu binarization; pixels at or below the threshold are ink.
pub fn binarize(img: &GrayImage) -> Result<BinaryImage> {
    let t = otsu_threshold(img)?;
    Ok(BinaryImage {
        width: img.width,
        height: img.height,
        ink: img.pixels().iter().map(|&p| p <= t).collect(),
    })
}
