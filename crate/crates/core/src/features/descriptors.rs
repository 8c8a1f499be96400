use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::imaging::BinaryImage;

/// A flattened, mean-centred, unit-length binary patch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PatchDescriptor {
    pub values: Vec<f64>,
    /// Top-left corner in zone coordinates.
    pub origin: (usize, usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Norm {
    L1,
    L2,
}

/// Descriptor extraction settings; codebooks are bound to these by hash.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureConfig {
    pub patch: usize,
    pub stride: usize,
    pub norm: Norm,
}

impl FeatureConfig {
    /// Real page scans.
    pub fn pages() -> Self {
        Self {
            patch: 12,
            stride: 4,
            norm: Norm::L1,
        }
    }

    /// Desk-scale synthetic words (font scale 2).
    pub fn synthetic() -> Self {
        Self {
            patch: 8,
            stride: 2,
            norm: Norm::L1,
        }
    }

    pub fn dim(&self) -> usize {
        self.patch * self.patch
    }

    /// Identifies the descriptor layout (patch geometry only; the histogram
    /// norm does not change what a codebook quantizes).
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(format!("raw-patch-v1;patch={};stride={}", self.patch, self.stride));
        hex::encode(&h.finalize()[..8])
    }
}

/// Dense grid of patches at `stride`; keeps patches with ink that are not
/// constant. Zones smaller than a patch yield nothing.
pub fn extract_descriptors(zone: &BinaryImage, patch: usize, stride: usize) -> Vec<PatchDescriptor> {
    let mut out = Vec::new();
    if patch == 0 || stride == 0 || zone.width() < patch || zone.height() < patch {
        return out;
    }
    let n = (patch * patch) as f64;
    let mut buf = vec![0.0f64; patch * patch];
    let mut y = 0;
    while y + patch <= zone.height() {
        let mut x = 0;
        while x + patch <= zone.width() {
            let mut ink = 0usize;
            for py in 0..patch {
                for px in 0..patch {
                    let v = zone.get(x + px, y + py);
                    buf[py * patch + px] = if v { 1.0 } else { 0.0 };
                    ink += v as usize;
                }
            }
            if ink > 0 && ink < patch * patch {
                let mean = ink as f64 / n;
                let mut values: Vec<f64> = buf.iter().map(|v| v - mean).collect();
                let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
                values.iter_mut().for_each(|v| *v /= norm);
                out.push(PatchDescriptor {
                    values,
                    origin: (x, y),
                });
            }
            x += stride;
        }
        y += stride;
    }
    out
}
