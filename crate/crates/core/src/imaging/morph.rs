use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::BinaryImage;
use crate::error::{Error, Result};

/// Random elastic distortion settings.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MorphParams {
    /// Peak displacement in pixels.
    pub amplitude: f64,
    /// Gaussian sigma of the displacement field, in pixels.
    pub smoothness: f64,
    pub seed: u64,
}

impl MorphParams {
    pub fn new(amplitude: f64, smoothness: f64, seed: u64) -> Result<Self> {
        let p = Self {
            amplitude,
            smoothness,
            seed,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn identity() -> Self {
        Self {
            amplitude: 0.0,
            smoothness: 1.0,
            seed: 0,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.amplitude >= 0.0) || !self.amplitude.is_finite() {
            return Err(Error::param("morph amplitude must be >= 0"));
        }
        if !(self.smoothness > 0.0) || !self.smoothness.is_finite() {
            return Err(Error::param("morph smoothness must be > 0"));
        }
        Ok(())
    }
}

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as isize;
    let mut k: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    k
}

fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    let period = 2 * n;
    let mut i = i.rem_euclid(period);
    if i >= n {
        i = period - i - 1;
    }
    i as usize
}

/// Separable Gaussian blur of a `w × h` field.
fn blur(field: &[f64], w: usize, h: usize, sigma: f64) -> Vec<f64> {
    let k = gaussian_kernel(sigma);
    let r = (k.len() / 2) as isize;
    let mut tmp = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (j, kv) in k.iter().enumerate() {
                let xx = reflect(x as isize + j as isize - r, w);
                acc += kv * field[y * w + xx];
            }
            tmp[y * w + x] = acc;
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (j, kv) in k.iter().enumerate() {
                let yy = reflect(y as isize + j as isize - r, h);
                acc += kv * tmp[yy * w + x];
            }
            out[y * w + x] = acc;
        }
    }
    out
}

/// Smoothed noise field rescaled so its largest magnitude is `amplitude`.
fn displacement_field(rng: &mut ChaCha8Rng, w: usize, h: usize, p: &MorphParams) -> Vec<f64> {
    let raw: Vec<f64> = (0..w * h)
        .map(|_| rng.random_range(-p.amplitude..=p.amplitude))
        .collect();
    let mut f = blur(&raw, w, h, p.smoothness);
    let peak = f.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let scale = if peak > 0.0 { p.amplitude / peak } else { 0.0 };
    for v in &mut f {
        *v = (*v * scale).clamp(-p.amplitude, p.amplitude);
    }
    f
}

/// Distorts `img` by a random smooth displacement field with
/// nearest-neighbour backward mapping. Deterministic in `params.seed`.
pub fn elastic_morph(img: &BinaryImage, params: &MorphParams) -> Result<BinaryImage> {
    if img.is_empty() {
        return Err(Error::domain("empty image"));
    }
    params.validate()?;
    if params.amplitude == 0.0 {
        return Ok(img.clone());
    }
    let (w, h) = (img.width(), img.height());
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let dx = displacement_field(&mut rng, w, h, params);
    let dy = displacement_field(&mut rng, w, h, params);
    let mut out = BinaryImage::blank(w, h);
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let sx = (x as f64 + dx[i]).round();
            let sy = (y as f64 + dy[i]).round();
            if sx >= 0.0 && sy >= 0.0 && (sx as usize) < w && (sy as usize) < h {
                out.set(x, y, img.get(sx as usize, sy as usize));
            }
        }
    }
    Ok(out)
}
