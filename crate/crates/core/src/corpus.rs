//! Deterministic synthetic handwriting corpus.
//!
//! Every instance is a word rendered with the built-in bitmap font, then
//! slanted, jittered, elastically morphed and speckled. The whole corpus is
//! a pure function of its [`CorpusSpec`]; [`Corpus::hash`] fingerprints it.
//!
//! ```
//! use wordharvest::corpus::{Corpus, CorpusSpec};
//!
//! let spec = CorpusSpec { classes: 2, per_class: 1, seed: 1, ..CorpusSpec::default() };
//! let a = Corpus::generate(&spec).unwrap();
//! let b = Corpus::generate(&spec).unwrap();
//! assert_eq!(a.hash(), b.hash());
//! assert_eq!(a.instances.len(), 2);
//! ```

use std::collections::BTreeSet;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::imaging::{io, synth_word, BinaryImage, GlyphSet, MorphParams, SynthOptions};
use crate::segmentation::Rect;

/// A rendering style. Instances cycle through the styles of a spec.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Style {
    pub name: String,
    /// Mean horizontal shear, output pixels per row.
    pub slant: f64,
    /// Inter-glyph gap in font pixels.
    pub gap: usize,
    /// Thicken strokes by one pixel to the right and below.
    pub bold: bool,
    /// Overrides the spec's font scale.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scale: Option<usize>,
}

impl Style {
    pub fn plain() -> Self {
        Self {
            name: "plain".into(),
            slant: 0.0,
            gap: 1,
            bold: false,
            scale: None,
        }
    }

    /// Heavy slanted script, visually far from [`Style::plain`].
    pub fn heavy() -> Self {
        Self {
            name: "heavy".into(),
            slant: 0.45,
            gap: 2,
            bold: true,
            scale: Some(3),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusSpec {
    pub classes: usize,
    pub per_class: usize,
    pub seed: u64,
    pub scale: usize,
    /// Morph amplitude in output pixels.
    pub amplitude: f64,
    pub smoothness: f64,
    pub noise_p: f64,
    /// Uniform per-instance slant perturbation, added to the style's slant.
    pub slant_jitter: f64,
    pub baseline_jitter: usize,
    pub books: usize,
    pub styles: Vec<Style>,
    /// Fixed words to use first; the rest of the vocabulary is drawn at
    /// random.
    #[serde(default)]
    pub words: Vec<String>,
    pub min_len: usize,
    pub max_len: usize,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        Self {
            classes: 50,
            per_class: 100,
            seed: 7,
            scale: 2,
            amplitude: 1.0,
            smoothness: 3.0,
            noise_p: 0.0,
            slant_jitter: 0.05,
            baseline_jitter: 1,
            books: 2,
            styles: vec![Style::plain()],
            words: Vec::new(),
            min_len: 3,
            max_len: 6,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CorpusInstance {
    pub id: String,
    pub label: String,
    pub book_id: String,
    pub style: String,
    /// Index of the instance within its class.
    pub index: usize,
    pub image: BinaryImage,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Corpus {
    pub spec: CorpusSpec,
    pub vocabulary: Vec<String>,
    pub instances: Vec<CorpusInstance>,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    spec: CorpusSpec,
    hash: String,
    instances: Vec<ManifestEntry>,
}

#[derive(Serialize, Deserialize)]
struct ManifestEntry {
    id: String,
    label: String,
    book_id: String,
    style: String,
    file: String,
}

/// Distinct random lowercase words, after the fixed ones.
pub fn vocabulary(spec: &CorpusSpec) -> Result<Vec<String>> {
    let glyphs = GlyphSet::builtin();
    let letters: Vec<char> = glyphs.chars().filter(|c| c.is_ascii_lowercase()).collect();
    let mut seen = BTreeSet::new();
    let mut out = Vec::with_capacity(spec.classes);
    for w in spec.words.iter().take(spec.classes) {
        if seen.insert(w.clone()) {
            out.push(w.clone());
        }
    }
    if spec.min_len == 0 || spec.max_len < spec.min_len {
        return Err(Error::param("word length range is empty"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(mix(spec.seed, 0x766f_6361_62, 0));
    let mut attempts = 0;
    while out.len() < spec.classes {
        attempts += 1;
        if attempts > 100 * spec.classes + 1000 {
            return Err(Error::param("cannot draw enough distinct words"));
        }
        let len = rng.random_range(spec.min_len..=spec.max_len);
        let w: String = (0..len).map(|_| letters[rng.random_range(0..letters.len())]).collect();
        if seen.insert(w.clone()) {
            out.push(w);
        }
    }
    Ok(out)
}

fn mix(seed: u64, a: u64, b: u64) -> u64 {
    // splitmix64 finalizer over the combined inputs
    let mut z = seed ^ a.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ b.wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn embolden(img: &BinaryImage) -> BinaryImage {
    let mut out = BinaryImage::blank(img.width() + 1, img.height() + 1);
    for y in 0..img.height() {
        for x in 0..img.width() {
            if img.get(x, y) {
                out.set(x, y, true);
                out.set(x + 1, y, true);
                out.set(x, y + 1, true);
            }
        }
    }
    out
}

/// Renders one instance of `word`.
pub fn render_instance(spec: &CorpusSpec, glyphs: &GlyphSet, word: &str, style: &Style, seed: u64) -> Result<BinaryImage> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let slant = style.slant + rng.random_range(-1.0..=1.0) * spec.slant_jitter;
    let opts = SynthOptions {
        scale: style.scale.unwrap_or(spec.scale),
        gap: style.gap,
        pad: 0,
        slant,
        baseline_jitter: spec.baseline_jitter,
        morph: MorphParams::new(spec.amplitude, spec.smoothness, rng.random())?,
        noise_p: 0.0,
    };
    let (img, _) = synth_word(word, glyphs, &opts)?;
    let img = if style.bold { embolden(&img) } else { img };
    let img = crate::imaging::salt_and_pepper(&img, spec.noise_p, rng.random());
    Ok(match img.ink_bbox() {
        Some((x, y, w, h)) => img.crop(x, y, w, h),
        None => img,
    })
}

impl Corpus {
    pub fn generate(spec: &CorpusSpec) -> Result<Self> {
        if spec.styles.is_empty() {
            return Err(Error::param("corpus needs at least one style"));
        }
        if spec.books == 0 {
            return Err(Error::param("corpus needs at least one book"));
        }
        let glyphs = GlyphSet::builtin();
        let vocab = vocabulary(spec)?;
        let mut instances = Vec::with_capacity(spec.classes * spec.per_class);
        for (c, word) in vocab.iter().enumerate() {
            for i in 0..spec.per_class {
                let style = &spec.styles[i % spec.styles.len()];
                let image = render_instance(spec, &glyphs, word, style, mix(spec.seed, c as u64 + 1, i as u64 + 1))?;
                instances.push(CorpusInstance {
                    id: format!("{word}-{i:04}"),
                    label: word.clone(),
                    book_id: format!("book{}", (i / spec.styles.len()) % spec.books),
                    style: style.name.clone(),
                    index: i,
                    image,
                });
            }
        }
        Ok(Self {
            spec: spec.clone(),
            vocabulary: vocab,
            instances,
        })
    }

    /// SHA-256 over ids, labels, books and pixel data.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for inst in &self.instances {
            h.update(inst.id.as_bytes());
            h.update([0]);
            h.update(inst.label.as_bytes());
            h.update([0]);
            h.update(inst.book_id.as_bytes());
            h.update([0]);
            h.update((inst.image.width() as u64).to_le_bytes());
            h.update((inst.image.height() as u64).to_le_bytes());
            h.update(inst.image.ink().iter().map(|&b| b as u8).collect::<Vec<u8>>());
        }
        hex::encode(h.finalize())
    }

    pub fn of_class<'a>(&'a self, label: &'a str) -> impl Iterator<Item = &'a CorpusInstance> + 'a {
        self.instances.iter().filter(move |i| i.label == label)
    }

    /// Writes `manifest.json` plus one PGM per instance under `images/`.
    pub fn write(&self, dir: &Path) -> Result<String> {
        std::fs::create_dir_all(dir.join("images"))?;
        let mut entries = Vec::with_capacity(self.instances.len());
        for inst in &self.instances {
            let file = format!("images/{}.pgm", inst.id);
            std::fs::write(dir.join(&file), io::encode_mask_pgm(&inst.image))?;
            entries.push(ManifestEntry {
                id: inst.id.clone(),
                label: inst.label.clone(),
                book_id: inst.book_id.clone(),
                style: inst.style.clone(),
                file,
            });
        }
        let hash = self.hash();
        let manifest = Manifest {
            spec: self.spec.clone(),
            hash: hash.clone(),
            instances: entries,
        };
        std::fs::write(dir.join("manifest.json"), serde_json::to_vec_pretty(&manifest)?)?;
        Ok(hash)
    }

    /// Reads a corpus written by [`Corpus::write`].
    pub fn read(dir: &Path) -> Result<Self> {
        let manifest: Manifest = serde_json::from_slice(&std::fs::read(dir.join("manifest.json"))?)?;
        let mut instances = Vec::with_capacity(manifest.instances.len());
        let mut counters: std::collections::BTreeMap<String, usize> = Default::default();
        for e in manifest.instances {
            let gray = io::read_gray(&dir.join(&e.file))?;
            let image = BinaryImage::from_fn(gray.width(), gray.height(), |x, y| gray.get(x, y) < 128);
            let idx = counters.entry(e.label.clone()).or_default();
            instances.push(CorpusInstance {
                id: e.id,
                label: e.label,
                book_id: e.book_id,
                style: e.style,
                index: *idx,
                image,
            });
            *idx += 1;
        }
        let mut vocabulary: Vec<String> = Vec::new();
        for i in &instances {
            if vocabulary.last() != Some(&i.label) && !vocabulary.contains(&i.label) {
                vocabulary.push(i.label.clone());
            }
        }
        Ok(Self {
            spec: manifest.spec,
            vocabulary,
            instances,
        })
    }
}

/// Ground truth of a synthetic page.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthPage {
    pub image: BinaryImage,
    /// `(top, bottom)` of each text line, bottom exclusive.
    pub lines: Vec<(usize, usize)>,
    /// Per line, `(label, box)` of each word in page coordinates.
    pub words: Vec<Vec<(String, Rect)>>,
}

/// Lays out rendered words into lines on a blank page.
pub fn synth_page(
    lines: &[Vec<BinaryImage>],
    labels: &[Vec<String>],
    margin: usize,
    word_gap: usize,
    line_gap: usize,
) -> SynthPage {
    let width = lines
        .iter()
        .map(|l| l.iter().map(|w| w.width()).sum::<usize>() + word_gap * l.len().saturating_sub(1))
        .max()
        .unwrap_or(0)
        + 2 * margin;
    let heights: Vec<usize> = lines.iter().map(|l| l.iter().map(|w| w.height()).max().unwrap_or(0)).collect();
    let height = heights.iter().sum::<usize>() + line_gap * lines.len().saturating_sub(1) + 2 * margin;
    let mut image = BinaryImage::blank(width.max(1), height.max(1));
    let mut out_lines = Vec::new();
    let mut out_words = Vec::new();
    let mut top = margin;
    for (li, line) in lines.iter().enumerate() {
        let h = heights[li];
        let mut x = margin;
        let mut boxes = Vec::new();
        for (wi, w) in line.iter().enumerate() {
            // bottom-align words on the line
            let y0 = top + h - w.height();
            for y in 0..w.height() {
                for xx in 0..w.width() {
                    if w.get(xx, y) {
                        image.set(x + xx, y0 + y, true);
                    }
                }
            }
            let label = labels.get(li).and_then(|l| l.get(wi)).cloned().unwrap_or_default();
            boxes.push((label, Rect::new(x, y0, w.width(), w.height())));
            x += w.width() + word_gap;
        }
        out_lines.push((top, top + h));
        out_words.push(boxes);
        top += h + line_gap;
    }
    SynthPage {
        image,
        lines: out_lines,
        words: out_words,
    }
}
