use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::descriptors::{extract_descriptors, FeatureConfig, Norm};
use super::kmeans::{kmeans, nearest};
use crate::error::{Error, Result};
use crate::imaging::BinaryImage;

pub const CODEBOOK_VERSION: u32 = 1;

/// Visual vocabulary bound to one descriptor configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Codebook {
    pub version: u32,
    pub k: usize,
    pub dim: usize,
    pub seed: u64,
    pub config_hash: String,
    pub centroids: Vec<Vec<f64>>,
}

impl Codebook {
    pub fn from_centroids(config: &FeatureConfig, seed: u64, centroids: Vec<Vec<f64>>) -> Result<Self> {
        if centroids.is_empty() {
            return Err(Error::param("codebook needs at least one centroid"));
        }
        let dim = config.dim();
        if let Some(c) = centroids.iter().find(|c| c.len() != dim) {
            return Err(Error::Dimension {
                expected: dim,
                got: c.len(),
            });
        }
        Ok(Self {
            version: CODEBOOK_VERSION,
            k: centroids.len(),
            dim,
            seed,
            config_hash: config.hash(),
            centroids,
        })
    }

    /// Content hash; cached features are keyed by it.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.config_hash.as_bytes());
        h.update(self.k.to_le_bytes());
        for c in &self.centroids {
            for v in c {
                h.update(v.to_le_bytes());
            }
        }
        hex::encode(&h.finalize()[..8])
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let cb: Codebook = serde_json::from_str(s)?;
        if cb.version != CODEBOOK_VERSION {
            return Err(Error::Migration {
                what: "codebook".into(),
                found: cb.version,
                supported: CODEBOOK_VERSION,
            });
        }
        Ok(cb)
    }
}

/// Bag-of-visual-words histogram of one zone.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub zone_id: String,
    pub histogram: Vec<f64>,
    pub norm: Norm,
    /// The zone produced no descriptors; the histogram is all zeros.
    #[serde(default)]
    pub empty: bool,
}

impl FeatureVector {
    pub fn dim(&self) -> usize {
        self.histogram.len()
    }

    pub fn distance(&self, other: &FeatureVector) -> f64 {
        self.histogram
            .iter()
            .zip(&other.histogram)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }
}

/// Builds a codebook from the descriptors of `zones`. At most
/// `max_descriptors` (seeded subsample) enter k-means.
pub fn build_codebook(
    zones: &[&BinaryImage],
    config: &FeatureConfig,
    k: usize,
    seed: u64,
    max_descriptors: usize,
) -> Result<Codebook> {
    let mut points: Vec<Vec<f64>> = zones
        .iter()
        .flat_map(|z| extract_descriptors(z, config.patch, config.stride))
        .map(|d| d.values)
        .collect();
    if points.len() > max_descriptors {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        points.shuffle(&mut rng);
        points.truncate(max_descriptors);
    }
    let km = kmeans(&points, k, seed, 100)?;
    Codebook::from_centroids(config, seed, km.centroids)
}

/// Histogram of nearest-centroid assignments, normalized per `config.norm`.
pub fn quantize(zone_id: &str, zone: &BinaryImage, codebook: &Codebook, config: &FeatureConfig) -> Result<FeatureVector> {
    if codebook.config_hash != config.hash() {
        return Err(Error::Config(format!(
            "codebook built for {}, extraction config is {}",
            codebook.config_hash,
            config.hash()
        )));
    }
    let descriptors = extract_descriptors(zone, config.patch, config.stride);
    let mut histogram = vec![0.0; codebook.k];
    for d in &descriptors {
        histogram[nearest(&d.values, &codebook.centroids).0] += 1.0;
    }
    let empty = descriptors.is_empty();
    if !empty {
        let n = match config.norm {
            Norm::L1 => histogram.iter().sum::<f64>(),
            Norm::L2 => histogram.iter().map(|v| v * v).sum::<f64>().sqrt(),
        };
        histogram.iter_mut().for_each(|v| *v /= n);
    }
    Ok(FeatureVector {
        zone_id: zone_id.to_string(),
        histogram,
        norm: config.norm,
        empty,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imaging::{elastic_morph, synth_word, GlyphSet, MorphParams, SynthOptions};
    use proptest::prelude::*;

    fn word(text: &str) -> BinaryImage {
        let opts = SynthOptions {
            scale: 2,
            pad: 2,
            ..SynthOptions::default()
        };
        synth_word(text, &GlyphSet::builtin(), &opts).unwrap().0
    }

    fn small_codebook() -> (Codebook, FeatureConfig) {
        let cfg = FeatureConfig::synthetic();
        let zones = [word("abc"), word("xyz"), word("hello")];
        let refs: Vec<&BinaryImage> = zones.iter().collect();
        (build_codebook(&refs, &cfg, 4, 3, 10_000).unwrap(), cfg)
    }

    #[test]
    fn empty_zone_gives_flagged_zero_vector() {
        let (cb, cfg) = small_codebook();
        let fv = quantize("z", &BinaryImage::blank(30, 30), &cb, &cfg).unwrap();
        assert!(fv.empty);
        assert_eq!(fv.histogram, vec![0.0; 4]);
    }

    #[test]
    fn single_bin_is_one_hot() {
        let cfg = FeatureConfig::synthetic();
        let zone = word("ab");
        let descs = extract_descriptors(&zone, cfg.patch, cfg.stride);
        // centroid 3 sits at the descriptor mean; the others are far away
        let dim = cfg.dim();
        let mean: Vec<f64> = (0..dim)
            .map(|i| descs.iter().map(|d| d.values[i]).sum::<f64>() / descs.len() as f64)
            .collect();
        let far = |s: f64| vec![s; dim];
        let cb = Codebook::from_centroids(&cfg, 0, vec![far(50.0), far(-50.0), far(80.0), mean]).unwrap();
        let fv = quantize("z", &zone, &cb, &cfg).unwrap();
        assert_eq!(fv.histogram, vec![0.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn histogram_matches_linear_scan_oracle() {
        let (cb, cfg) = small_codebook();
        let zone = BinaryImage::from_fn(24, 12, |x, y| (x / 3 + y / 2) % 3 == 0 && x > 1);
        let descs = extract_descriptors(&zone, cfg.patch, cfg.stride);
        assert_eq!(descs.len(), 9 * 3);
        let mut counts = [0usize; 4];
        for d in &descs {
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for (i, c) in cb.centroids.iter().enumerate() {
                let dist: f64 = c.iter().zip(&d.values).map(|(a, b)| (a - b).powi(2)).sum();
                if dist < best_d {
                    best_d = dist;
                    best = i;
                }
            }
            counts[best] += 1;
        }
        let fv = quantize("z", &zone, &cb, &cfg).unwrap();
        for i in 0..4 {
            assert!((fv.histogram[i] - counts[i] as f64 / descs.len() as f64).abs() < 1e-12);
        }
    }

    #[test]
    fn config_mismatch_is_rejected() {
        let (cb, _) = small_codebook();
        let err = quantize("z", &word("a"), &cb, &FeatureConfig::pages()).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn l2_norm_is_unit() {
        let (cb, cfg) = small_codebook();
        let cfg2 = FeatureConfig { norm: Norm::L2, ..cfg };
        let fv = quantize("z", &word("hex"), &cb, &cfg2).unwrap();
        let n: f64 = fv.histogram.iter().map(|v| v * v).sum();
        assert!((n - 1.0).abs() < 1e-9);
    }

    #[test]
    fn identity_morph_has_zero_distance() {
        let (cb, cfg) = small_codebook();
        let z = word("bold");
        let m = elastic_morph(&z, &MorphParams::new(0.0, 3.0, 9).unwrap()).unwrap();
        let a = quantize("a", &z, &cb, &cfg).unwrap();
        let b = quantize("b", &m, &cb, &cfg).unwrap();
        assert_eq!(a.distance(&b), 0.0);
    }

    #[test]
    fn codebook_rebuild_and_json_round_trip() {
        let (a, _) = small_codebook();
        let (b, _) = small_codebook();
        assert_eq!(a, b);
        assert_eq!(a.hash(), b.hash());
        let back = Codebook::from_json(&a.to_json().unwrap()).unwrap();
        assert_eq!(back, a);
        let mut old = serde_json::to_value(&a).unwrap();
        old["version"] = 99.into();
        assert!(matches!(Codebook::from_json(&old.to_string()), Err(Error::Migration { found: 99, .. })));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]

        #[test]
        fn quantize_is_l1_normalized(bits in prop::collection::vec(any::<bool>(), 20 * 14)) {
            let (cb, cfg) = small_codebook();
            let zone = BinaryImage::new(20, 14, bits).unwrap();
            let fv = quantize("z", &zone, &cb, &cfg).unwrap();
            prop_assert!(fv.histogram.iter().all(|&v| v >= 0.0));
            if !fv.empty {
                prop_assert!((fv.histogram.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            }
        }
    }
}
