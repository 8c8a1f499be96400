use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{elastic_morph, BinaryImage, GlyphSet, MorphParams};
use crate::error::{Error, Result};

/// Rendering knobs for [`synth_word`].
#[derive(Clone, Debug, PartialEq)]
pub struct SynthOptions {
    /// Integer upscaling of the bitmap font.
    pub scale: usize,
    /// Blank columns between glyphs, in font pixels.
    pub gap: usize,
    /// Background border added around the word, in output pixels.
    pub pad: usize,
    /// Horizontal shear in output pixels per output row (slanted writing).
    pub slant: f64,
    /// Max random vertical offset per glyph, in font pixels.
    pub baseline_jitter: usize,
    pub morph: MorphParams,
    /// Probability of flipping each output pixel.
    pub noise_p: f64,
}

impl Default for SynthOptions {
    fn default() -> Self {
        Self {
            scale: 1,
            gap: 1,
            pad: 0,
            slant: 0.0,
            baseline_jitter: 0,
            morph: MorphParams::identity(),
            noise_p: 0.0,
        }
    }
}

/// Flips every pixel independently with probability `p`.
pub fn salt_and_pepper(img: &BinaryImage, p: f64, seed: u64) -> BinaryImage {
    if p <= 0.0 {
        return img.clone();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = img.clone();
    for y in 0..img.height() {
        for x in 0..img.width() {
            if rng.random_bool(p.min(1.0)) {
                out.set(x, y, !img.get(x, y));
            }
        }
    }
    out
}

/// Renders `text` with the bitmap font, then distorts it. Returns the image
/// and its ground-truth label.
pub fn synth_word(
    text: &str,
    glyphs: &GlyphSet,
    opts: &SynthOptions,
) -> Result<(BinaryImage, String)> {
    if opts.scale == 0 {
        return Err(Error::param("scale must be >= 1"));
    }
    if !(0.0..=1.0).contains(&opts.noise_p) {
        return Err(Error::param("noise probability must lie in [0, 1]"));
    }
    let cells = text
        .chars()
        .map(|c| {
            glyphs
                .get(c)
                .ok_or_else(|| Error::domain(format!("unknown glyph '{c}'")))
        })
        .collect::<Result<Vec<_>>>()?;
    if cells.is_empty() {
        return Err(Error::domain("empty text"));
    }

    let mut jitter_rng = ChaCha8Rng::seed_from_u64(opts.morph.seed ^ 0x6a09_e667_f3bc_c908);
    let j = opts.baseline_jitter;
    let src_w: usize =
        cells.iter().map(|g| g.width()).sum::<usize>() + opts.gap * (cells.len() - 1);
    let src_h = glyphs.height() + 2 * j;

    let mut src = BinaryImage::blank(src_w, src_h);
    let mut cursor = 0;
    for g in &cells {
        let dy = if j > 0 {
            jitter_rng.random_range(0..=2 * j)
        } else {
            0
        };
        for y in 0..g.bitmap.height() {
            for x in 0..g.width() {
                if g.bitmap.get(x, y) {
                    src.set(cursor + x, y + dy, true);
                }
            }
        }
        cursor += g.width() + opts.gap;
    }

    let s = opts.scale;
    let (w, h) = (src_w * s, src_h * s);
    let shear_extra = (opts.slant.abs() * h as f64).ceil() as usize;
    let out_w = w + shear_extra + 2 * opts.pad;
    let out_h = h + 2 * opts.pad;
    let mut img = BinaryImage::blank(out_w, out_h);
    for y in 0..h {
        let shift = if opts.slant >= 0.0 {
            (opts.slant * (h - 1 - y) as f64).round() as usize
        } else {
            (-opts.slant * y as f64).round() as usize
        };
        for x in 0..w {
            if src.get(x / s, y / s) {
                img.set(x + shift + opts.pad, y + opts.pad, true);
            }
        }
    }

    let morphed = elastic_morph(&img, &opts.morph)?;
    let noisy = salt_and_pepper(&morphed, opts.noise_p, opts.morph.seed.wrapping_add(0x9e37_79b9));
    Ok((noisy, text.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_glyph_is_exact_scaled_bitmap() {
        let g = GlyphSet::builtin();
        let (img, label) = synth_word("a", &g, &SynthOptions { scale: 2, ..Default::default() }).unwrap();
        assert_eq!(label, "a");
        let a = &g.get('a').unwrap().bitmap;
        assert_eq!((img.width(), img.height()), (a.width() * 2, a.height() * 2));
        for y in 0..img.height() {
            for x in 0..img.width() {
                assert_eq!(img.get(x, y), a.get(x / 2, y / 2));
            }
        }
    }

    #[test]
    fn width_is_concatenation() {
        let g = GlyphSet::builtin();
        let opts = SynthOptions { gap: 2, ..Default::default() };
        let w = |t: &str| synth_word(t, &g, &opts).unwrap().0.width();
        assert_eq!(w("ab"), w("a") + 2 + w("b"));
        assert_eq!(w("il"), 3 + 2 + 3);
    }

    #[test]
    fn unknown_glyph_names_character() {
        let g = GlyphSet::builtin();
        let err = synth_word("aQb", &g, &SynthOptions::default()).unwrap_err();
        assert!(err.to_string().contains("'Q'"), "{err}");
    }

    #[test]
    fn noise_flips_pixels_deterministically() {
        let g = GlyphSet::builtin();
        let opts = SynthOptions { scale: 2, noise_p: 0.1, morph: MorphParams { seed: 5, ..MorphParams::identity() }, ..Default::default() };
        let (a, _) = synth_word("xyz", &g, &opts).unwrap();
        let (b, _) = synth_word("xyz", &g, &opts).unwrap();
        let (clean, _) = synth_word("xyz", &g, &SynthOptions { noise_p: 0.0, ..opts.clone() }).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, clean);
    }
}
