use crate::error::Result;
use crate::features::{quantize, Codebook, FeatureConfig, FeatureVector};
use crate::imaging::{elastic_morph, BinaryImage, MorphParams};

use super::Sample;

/// Produces synthetic feature vectors from a labeled sample.
pub trait Augmenter: Send + Sync {
    /// Variant `index` of `sample`, or `None` when the source image is
    /// unavailable.
    fn augment(&self, sample: &Sample, index: usize, seed: u64) -> Result<Option<FeatureVector>>;
}

/// Elastic-morph variants of the sample's zone image, re-quantized.
pub struct MorphAugmenter<F> {
    pub images: F,
    pub codebook: Codebook,
    pub config: FeatureConfig,
    pub amplitude: f64,
    pub smoothness: f64,
}

impl<F> MorphAugmenter<F>
where
    F: Fn(&str) -> Option<BinaryImage> + Send + Sync,
{
    pub fn new(images: F, codebook: Codebook, config: FeatureConfig) -> Self {
        Self {
            images,
            codebook,
            config,
            amplitude: 1.5,
            smoothness: 3.0,
        }
    }
}

impl<F> Augmenter for MorphAugmenter<F>
where
    F: Fn(&str) -> Option<BinaryImage> + Send + Sync,
{
    fn augment(&self, sample: &Sample, index: usize, seed: u64) -> Result<Option<FeatureVector>> {
        let Some(img) = (self.images)(&sample.zone_id) else {
            return Ok(None);
        };
        let pad = self.amplitude.ceil() as usize;
        let params = MorphParams::new(self.amplitude, self.smoothness, seed)?;
        let morphed = elastic_morph(&img.padded(pad), &params)?;
        // zones are tight ink boxes; keep variants in the same frame
        let morphed = match morphed.ink_bbox() {
            Some((x, y, w, h)) => morphed.crop(x, y, w, h),
            None => morphed,
        };
        let id = format!("{}~aug{index}", sample.zone_id);
        quantize(&id, &morphed, &self.codebook, &self.config).map(Some)
    }
}
