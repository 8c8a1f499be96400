use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::imaging::{otsu_threshold, BinaryImage, GrayImage};

#[derive(Clone, Debug, PartialEq)]
pub struct FilledCrop {
    pub image: GrayImage,
    /// No background pixels were available; the crop median was used.
    pub used_fallback: bool,
}

/// Replaces masked pixels (foreign ascenders/descenders) with luminance
/// values sampled from the crop's own unmasked background.
pub fn fill_background(crop: &GrayImage, mask: &BinaryImage, seed: u64) -> Result<FilledCrop> {
    if crop.width() != mask.width() || crop.height() != mask.height() {
        return Err(Error::param("mask and crop dimensions differ"));
    }
    if mask.ink_count() == 0 || crop.is_empty() {
        return Ok(FilledCrop {
            image: crop.clone(),
            used_fallback: false,
        });
    }
    let t = otsu_threshold(crop)?;
    let background: Vec<u8> = crop
        .pixels()
        .iter()
        .zip(mask.ink())
        .filter(|(&p, &m)| !m && p > t)
        .map(|(&p, _)| p)
        .collect();

    let mut out = crop.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let used_fallback = background.is_empty();
    let median = {
        let mut all = crop.pixels().to_vec();
        all.sort_unstable();
        all[all.len() / 2]
    };
    for y in 0..crop.height() {
        for x in 0..crop.width() {
            if mask.get(x, y) {
                let v = if used_fallback {
                    median
                } else {
                    background[rng.random_range(0..background.len())]
                };
                out.set(x, y, v);
            }
        }
    }
    Ok(FilledCrop {
        image: out,
        used_fallback,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parchment(w: usize, h: usize, seed: u64) -> GrayImage {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        GrayImage::from_fn(w, h, |x, y| {
            if (y == 20 || y == 21) && x > 5 && x < 58 {
                30 // a stroke
            } else {
                rng.random_range(170..=230)
            }
        })
    }

    fn histogram(values: impl Iterator<Item = u8>) -> [f64; 32] {
        let mut h = [0.0; 32];
        let mut n = 0.0;
        for v in values {
            h[v as usize / 8] += 1.0;
            n += 1.0;
        }
        h.iter_mut().for_each(|b| *b /= n);
        h
    }

    fn chi_square(a: &[f64; 32], b: &[f64; 32]) -> f64 {
        a.iter()
            .zip(b)
            .filter(|(x, y)| *x + *y > 0.0)
            .map(|(x, y)| (x - y) * (x - y) / (x + y))
            .sum::<f64>()
            * 0.5
    }

    #[test]
    fn empty_mask_is_identity() {
        let crop = parchment(16, 16, 1);
        let out = fill_background(&crop, &BinaryImage::blank(16, 16), 3).unwrap();
        assert_eq!(out.image, crop);
        assert!(!out.used_fallback);
    }

    #[test]
    fn single_value_background() {
        let mut crop = GrayImage::filled(8, 8, 200);
        crop.set(3, 3, 10);
        crop.set(4, 3, 10);
        let mut mask = BinaryImage::blank(8, 8);
        mask.set(3, 3, true);
        let out = fill_background(&crop, &mask, 0).unwrap();
        assert_eq!(out.image.get(3, 3), 200);
        assert_eq!(out.image.get(4, 3), 10);
    }

    #[test]
    fn all_ink_crop_falls_back_to_median() {
        let crop = GrayImage::from_fn(4, 4, |x, _| if x < 2 { 10 } else { 20 });
        let mask = BinaryImage::from_fn(4, 4, |_, _| true);
        let out = fill_background(&crop, &mask, 0).unwrap();
        assert!(out.used_fallback);
        assert!(out.image.pixels().iter().all(|&p| p == 20));
    }

    #[test]
    fn only_masked_pixels_change_and_never_pure_white() {
        let crop = parchment(64, 64, 9);
        let mask = BinaryImage::from_fn(64, 64, |x, y| (40..52).contains(&y) && (10..50).contains(&x));
        let out = fill_background(&crop, &mask, 5).unwrap().image;
        for y in 0..64 {
            for x in 0..64 {
                if !mask.get(x, y) {
                    assert_eq!(out.get(x, y), crop.get(x, y));
                } else {
                    assert!(out.get(x, y) < 255);
                }
            }
        }
    }

    #[test]
    fn filled_region_matches_background_texture() {
        let crop = parchment(64, 64, 9);
        let mask = BinaryImage::from_fn(64, 64, |x, y| (40..52).contains(&y) && (10..50).contains(&x));
        let out = fill_background(&crop, &mask, 5).unwrap().image;
        let filled = histogram((0..64 * 64).filter(|i| mask.ink()[*i]).map(|i| out.pixels()[i]));
        let bg = histogram(
            (0..64 * 64)
                .filter(|i| !mask.ink()[*i] && crop.pixels()[*i] > 100)
                .map(|i| crop.pixels()[i]),
        );
        let d = chi_square(&filled, &bg);
        // reference value at seed 5, pinned
        assert!((d - REFERENCE_CHI2).abs() < 1e-12, "chi2 = {d}");
        assert!(d < 0.05);
    }

    const REFERENCE_CHI2: f64 = 0.0029746773058612506;
}
