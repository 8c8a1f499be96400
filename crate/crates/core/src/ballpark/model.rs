use serde::{Deserialize, Serialize};
use unicode_normalization::UnicodeNormalization;

use super::Regime;
use crate::error::{Error, Result};
use crate::features::FeatureVector;

/// NFC, then trim surrounding whitespace.
pub fn normalize_label(raw: &str) -> String {
    raw.nfc().collect::<String>().trim().to_string()
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ClassId {
    pub label: String,
    pub class_key: String,
}

impl ClassId {
    pub fn new(raw: &str) -> Result<Self> {
        let label = normalize_label(raw);
        if label.is_empty() {
            return Err(Error::domain("empty label"));
        }
        Ok(Self {
            class_key: label.clone(),
            label,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    /// Entered by a user for a zone that had no hypothesis.
    New,
    /// A hit-list hypothesis accepted by a user.
    Confirmed,
    /// Generated by augmentation; never counts as a label.
    Synthetic,
}

impl Provenance {
    pub fn is_human(self) -> bool {
        !matches!(self, Provenance::Synthetic)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub zone_id: String,
    pub feature: FeatureVector,
    pub label: ClassId,
    pub provenance: Provenance,
}

impl Sample {
    pub fn new(feature: FeatureVector, label: ClassId, provenance: Provenance) -> Self {
        Self {
            zone_id: feature.zone_id.clone(),
            feature,
            label,
            provenance,
        }
    }
}

/// Per-dimension mean and variance of a collection's feature pool.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoolStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    pub count: usize,
}

/// Absolute lower bound on any variance entry.
pub(crate) const MIN_VARIANCE: f64 = 1e-12;

impl PoolStats {
    pub fn from_vectors<'a>(vectors: impl IntoIterator<Item = &'a [f64]>) -> Result<Self> {
        let mut iter = vectors.into_iter().peekable();
        let dim = match iter.peek() {
            Some(v) => v.len(),
            None => return Err(Error::domain("empty feature pool")),
        };
        let mut mean = vec![0.0; dim];
        let mut m2 = vec![0.0; dim];
        let mut count = 0usize;
        // Welford
        for v in iter {
            if v.len() != dim {
                return Err(Error::Dimension { expected: dim, got: v.len() });
            }
            count += 1;
            for d in 0..dim {
                let delta = v[d] - mean[d];
                mean[d] += delta / count as f64;
                m2[d] += delta * (v[d] - mean[d]);
            }
        }
        let var = m2.iter().map(|s| s / count as f64).collect();
        Ok(Self { mean, var, count })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Mean per-dimension variance.
    pub fn global_variance(&self) -> f64 {
        if self.var.is_empty() {
            0.0
        } else {
            self.var.iter().sum::<f64>() / self.var.len() as f64
        }
    }

    pub fn variance_floor(&self) -> f64 {
        (1e-6 * self.global_variance()).max(MIN_VARIANCE)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Exemplar {
    pub zone_id: String,
    pub vector: Vec<f64>,
    pub provenance: Provenance,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelPayload {
    None,
    Exemplars { exemplars: Vec<Exemplar> },
    Centroid { mean: Vec<f64>, var: Vec<f64> },
    Linear { w: Vec<f64>, b: f64 },
}

/// A trained class model. The payload always matches the regime:
/// `OneNN` holds exemplars, `NearestCentroid` a centroid, `Svm` and
/// `DeepEligible` a linear decision function.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassModel {
    pub class_key: String,
    pub label: String,
    pub regime: Regime,
    /// Human labels only.
    pub n_labels: usize,
    /// Training vectors including synthetic ones.
    pub n_effective: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub style: Option<String>,
    pub version: u64,
    pub payload: ModelPayload,
}

impl ClassModel {
    pub fn is_trained(&self) -> bool {
        !matches!(self.payload, ModelPayload::None)
    }

    pub fn dim(&self) -> Option<usize> {
        match &self.payload {
            ModelPayload::None => None,
            ModelPayload::Exemplars { exemplars } => exemplars.first().map(|e| e.vector.len()),
            ModelPayload::Centroid { mean, .. } => Some(mean.len()),
            ModelPayload::Linear { w, .. } => Some(w.len()),
        }
    }

    pub(crate) fn check_dim(&self, x: &[f64]) -> Result<()> {
        match self.dim() {
            Some(d) if d != x.len() => Err(Error::Dimension {
                expected: d,
                got: x.len(),
            }),
            _ => Ok(()),
        }
    }

    /// Recognition score used to compare classes: higher is better.
    pub fn classify_score(&self, x: &[f64]) -> Option<f64> {
        match &self.payload {
            ModelPayload::None => None,
            ModelPayload::Exemplars { exemplars } => Some(-nearest_exemplar_distance(exemplars, x)),
            ModelPayload::Centroid { mean, var } => Some(-normalized_distance(mean, var, x)),
            ModelPayload::Linear { w, b } => Some(logistic(decision(w, *b, x))),
        }
    }

    /// Class-conditional score `log p(x | C)` used for hit lists. Not
    /// comparable across classes.
    pub fn log_density(&self, x: &[f64]) -> Option<f64> {
        match &self.payload {
            ModelPayload::None => None,
            ModelPayload::Exemplars { exemplars } => Some(-nearest_exemplar_distance(exemplars, x)),
            ModelPayload::Centroid { mean, var } => Some(gaussian_log_density(mean, var, x)),
            ModelPayload::Linear { w, b } => Some(decision(w, *b, x)),
        }
    }
}

pub(crate) fn nearest_exemplar_distance(exemplars: &[Exemplar], x: &[f64]) -> f64 {
    exemplars
        .iter()
        .map(|e| crate::features::sq_dist(&e.vector, x))
        .fold(f64::INFINITY, f64::min)
        .sqrt()
}

pub(crate) fn normalized_distance(mean: &[f64], var: &[f64], x: &[f64]) -> f64 {
    mean.iter()
        .zip(var)
        .zip(x)
        .map(|((m, v), xi)| (xi - m) * (xi - m) / v)
        .sum::<f64>()
        .sqrt()
}

pub(crate) fn gaussian_log_density(mean: &[f64], var: &[f64], x: &[f64]) -> f64 {
    let ln_2pi = (2.0 * std::f64::consts::PI).ln();
    -0.5 * mean
        .iter()
        .zip(var)
        .zip(x)
        .map(|((m, v), xi)| (xi - m) * (xi - m) / v + v.ln() + ln_2pi)
        .sum::<f64>()
}

pub(crate) fn decision(w: &[f64], b: f64, x: &[f64]) -> f64 {
    w.iter().zip(x).map(|(a, c)| a * c).sum::<f64>() + b
}

pub(crate) fn logistic(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}
