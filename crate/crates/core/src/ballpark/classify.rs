use serde::{Deserialize, Serialize};

use super::model::{gaussian_log_density, PoolStats};
use super::ClassModel;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Hypothesis {
    pub class_key: String,
    pub score: f64,
}

/// Scores `x` against every trained model and returns the best `top_n`,
/// highest score first, ties broken by `class_key`.
pub fn classify(x: &[f64], models: &[ClassModel], top_n: usize) -> Result<Vec<Hypothesis>> {
    let mut out = Vec::with_capacity(models.len());
    for m in models {
        m.check_dim(x)?;
        if let Some(score) = m.classify_score(x) {
            out.push(Hypothesis {
                class_key: m.class_key.clone(),
                score,
            });
        }
    }
    out.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.class_key.cmp(&b.class_key)));
    out.truncate(top_n);
    Ok(out)
}

/// Diagonal Gaussian over a style's feature vectors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StyleDensity {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

impl StyleDensity {
    /// Fits the style's vectors; variances are floored relative to the
    /// collection pool.
    pub fn fit<'a>(vectors: impl IntoIterator<Item = &'a [f64]>, pool: &PoolStats) -> Result<Self> {
        let stats = PoolStats::from_vectors(vectors)?;
        if stats.dim() != pool.dim() {
            return Err(Error::Dimension {
                expected: pool.dim(),
                got: stats.dim(),
            });
        }
        let floor = pool.variance_floor().max(1e-3 * pool.global_variance());
        Ok(Self {
            var: stats.var.iter().map(|v| v.max(floor)).collect(),
            mean: stats.mean,
        })
    }

    pub fn log_likelihood(&self, x: &[f64]) -> f64 {
        gaussian_log_density(&self.mean, &self.var, x)
    }
}

/// A model set trained for one handwriting style.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StyleCandidate {
    pub style: String,
    pub models: Vec<ClassModel>,
    pub density: StyleDensity,
}

/// Index of the largest likelihood; the first wins ties.
pub fn select_by_likelihood(likelihoods: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &l) in likelihoods.iter().enumerate() {
        if best.is_none_or(|b| l > likelihoods[b]) {
            best = Some(i);
        }
    }
    best
}

/// Picks the model set whose style most likely generated `x`.
pub fn select_model<'a>(x: &[f64], candidates: &'a [StyleCandidate]) -> Result<&'a StyleCandidate> {
    let lls: Vec<f64> = candidates.iter().map(|c| c.density.log_likelihood(x)).collect();
    select_by_likelihood(&lls)
        .map(|i| &candidates[i])
        .ok_or_else(|| Error::domain("no style candidates"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ballpark::{ModelPayload, Regime};
    use proptest::prelude::*;

    fn centroid(key: &str, mean: Vec<f64>, var: Vec<f64>) -> ClassModel {
        ClassModel {
            class_key: key.into(),
            label: key.into(),
            regime: Regime::NearestCentroid,
            n_labels: 3,
            n_effective: 3,
            style: None,
            version: 1,
            payload: ModelPayload::Centroid { mean, var },
        }
    }

    #[test]
    fn midpoint_tie_goes_to_smaller_key() {
        let models = [
            centroid("b", vec![0.0, 0.0], vec![1.0, 1.0]),
            centroid("a", vec![2.0, 0.0], vec![1.0, 1.0]),
        ];
        let h = classify(&[1.0, 0.0], &models, 2).unwrap();
        assert_eq!(h[0].class_key, "a");
        assert_eq!(h[0].score, h[1].score);
    }

    #[test]
    fn untrained_models_are_skipped() {
        let mut stub = centroid("z", vec![], vec![]);
        stub.payload = ModelPayload::None;
        stub.regime = Regime::ZeroLabel;
        let models = [stub, centroid("a", vec![0.0], vec![1.0])];
        let h = classify(&[0.5], &models, 5).unwrap();
        assert_eq!(h.len(), 1);
    }

    #[test]
    fn dimension_mismatch_errors() {
        let models = [centroid("a", vec![0.0, 1.0], vec![1.0, 1.0])];
        assert!(classify(&[0.5], &models, 1).is_err());
    }

    #[test]
    fn style_mode_wins() {
        let pool = PoolStats::from_vectors([[0.0, 0.0].as_slice(), [4.0, 4.0].as_slice()]).unwrap();
        let s1 = StyleDensity::fit([[0.0, 0.1].as_slice(), [0.2, -0.1].as_slice()], &pool).unwrap();
        let s2 = StyleDensity::fit([[4.0, 4.1].as_slice(), [3.8, 3.9].as_slice()], &pool).unwrap();
        let cands = vec![
            StyleCandidate {
                style: "s1".into(),
                models: vec![],
                density: s1.clone(),
            },
            StyleCandidate {
                style: "s2".into(),
                models: vec![],
                density: s2,
            },
        ];
        assert_eq!(select_model(&s1.mean, &cands).unwrap().style, "s1");
        assert_eq!(select_model(&s1.mean, &cands[1..]).unwrap().style, "s2");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]

        #[test]
        fn classify_ignores_model_order(
            means in prop::collection::vec(prop::collection::vec(-2.0f64..2.0, 3), 2..8),
            x in prop::collection::vec(-2.0f64..2.0, 3),
            rot in 0usize..8,
        ) {
            let models: Vec<ClassModel> = means.iter().enumerate()
                .map(|(i, m)| centroid(&format!("c{i}"), m.clone(), vec![0.5, 1.0, 2.0]))
                .collect();
            let mut shuffled = models.clone();
            shuffled.rotate_left(rot % models.len());
            shuffled.reverse();
            prop_assert_eq!(classify(&x, &models, 10).unwrap(), classify(&x, &shuffled, 10).unwrap());
        }

        #[test]
        fn likelihood_scaling_keeps_choice(ls in prop::collection::vec(1e-6f64..10.0, 1..6), k in 1e-3f64..1e3) {
            let scaled: Vec<f64> = ls.iter().map(|l| l * k).collect();
            prop_assert_eq!(select_by_likelihood(&ls), select_by_likelihood(&scaled));
        }
    }
}
