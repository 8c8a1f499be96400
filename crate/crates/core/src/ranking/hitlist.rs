use serde::{Deserialize, Serialize};

use crate::ballpark::{ClassModel, Provenance};
use crate::error::{Error, Result};
use crate::features::FeatureVector;
use crate::Timestamp;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HitEntry {
    pub zone_id: String,
    pub score: f64,
    #[serde(rename = "labeled")]
    pub already_labeled: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<Provenance>,
}

/// Candidates for one class, best first.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HitList {
    pub class_key: String,
    pub model_version: u64,
    pub generated_at: Timestamp,
    pub entries: Vec<HitEntry>,
}

impl HitList {
    /// Flags entries that already carry a label for this class.
    pub fn mark_labeled(&mut self, label_of: impl Fn(&str) -> Option<Provenance>) {
        for e in &mut self.entries {
            e.provenance = label_of(&e.zone_id);
            e.already_labeled = e.provenance.is_some();
        }
    }
}

/// Ranks `pool` by `log p(x | C)` under `model`. Scores are not normalized
/// against other classes. Equal scores are ordered by `zone_id`.
pub fn rank_hitlist<'a>(
    model: &ClassModel,
    pool: impl IntoIterator<Item = &'a FeatureVector>,
    limit: usize,
    now: Timestamp,
) -> Result<HitList> {
    if !model.is_trained() {
        return Err(Error::NoModel(model.class_key.clone()));
    }
    let mut entries = Vec::new();
    for fv in pool {
        model.check_dim(&fv.histogram)?;
        let score = model.log_density(&fv.histogram).expect("trained model");
        entries.push(HitEntry {
            zone_id: fv.zone_id.clone(),
            score,
            already_labeled: false,
            provenance: None,
        });
    }
    entries.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.zone_id.cmp(&b.zone_id)));
    entries.truncate(limit);
    Ok(HitList {
        class_key: model.class_key.clone(),
        model_version: model.version,
        generated_at: now,
        entries,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ballpark::{Exemplar, ModelPayload, Regime};
    use crate::features::Norm;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn fv(id: &str, h: Vec<f64>) -> FeatureVector {
        FeatureVector {
            zone_id: id.into(),
            histogram: h,
            norm: Norm::L1,
            empty: false,
        }
    }

    fn centroid_model(mean: Vec<f64>, var: Vec<f64>) -> ClassModel {
        ClassModel {
            class_key: "k".into(),
            label: "k".into(),
            regime: Regime::NearestCentroid,
            n_labels: 4,
            n_effective: 4,
            style: None,
            version: 3,
            payload: ModelPayload::Centroid { mean, var },
        }
    }

    #[test]
    fn centroid_ranks_first() {
        let m = centroid_model(vec![0.3, 0.7], vec![0.01, 0.02]);
        let pool = [fv("a", vec![0.5, 0.5]), fv("b", vec![0.3, 0.7]), fv("c", vec![0.0, 1.0])];
        let h = rank_hitlist(&m, &pool, 10, 0).unwrap();
        assert_eq!(h.entries[0].zone_id, "b");
        assert_eq!(h.model_version, 3);
    }

    #[test]
    fn equal_scores_follow_zone_id() {
        let m = centroid_model(vec![0.5], vec![1.0]);
        let pool = [fv("z2", vec![0.4]), fv("z1", vec![0.6])];
        let h = rank_hitlist(&m, &pool, 10, 0).unwrap();
        assert_eq!(h.entries[0].score, h.entries[1].score);
        assert_eq!(h.entries[0].zone_id, "z1");
    }

    #[test]
    fn untrained_model_is_an_error() {
        let mut m = centroid_model(vec![], vec![]);
        m.payload = ModelPayload::None;
        let err = rank_hitlist(&m, &[fv("a", vec![1.0])], 5, 0).unwrap_err();
        assert_eq!(err.to_string(), "no model for class k");
    }

    #[test]
    fn ordering_matches_full_sort_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let dim = 8;
        let pool: Vec<FeatureVector> = (0..500)
            .map(|i| fv(&format!("z{i:03}"), (0..dim).map(|_| rng.random_range(0.0..1.0)).collect()))
            .collect();
        let exemplars = (0..3)
            .map(|i| Exemplar {
                zone_id: format!("e{i}"),
                vector: pool[i * 7].histogram.clone(),
                provenance: Provenance::Confirmed,
            })
            .collect();
        let models = [
            centroid_model(vec![0.4; dim], (0..dim).map(|d| 0.05 + d as f64 * 0.01).collect()),
            ClassModel {
                regime: Regime::OneNN,
                payload: ModelPayload::Exemplars { exemplars },
                ..centroid_model(vec![], vec![])
            },
        ];
        for m in &models {
            let h = rank_hitlist(m, &pool, 500, 0).unwrap();
            let mut oracle: Vec<(f64, String)> = pool
                .iter()
                .map(|f| {
                    let s = match &m.payload {
                        ModelPayload::Centroid { mean, var } => {
                            let mut acc = 0.0;
                            for d in 0..dim {
                                acc += (f.histogram[d] - mean[d]).powi(2) / var[d] + (2.0 * std::f64::consts::PI * var[d]).ln();
                            }
                            -0.5 * acc
                        }
                        ModelPayload::Exemplars { exemplars } => -exemplars
                            .iter()
                            .map(|e| e.vector.iter().zip(&f.histogram).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt())
                            .fold(f64::INFINITY, f64::min),
                        _ => unreachable!(),
                    };
                    (s, f.zone_id.clone())
                })
                .collect();
            oracle.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
            // identical order; scores agree to rounding
            let got: Vec<&str> = h.entries.iter().map(|e| e.zone_id.as_str()).collect();
            let expect: Vec<&str> = oracle.iter().map(|o| o.1.as_str()).collect();
            assert_eq!(got, expect);
            for (e, o) in h.entries.iter().zip(&oracle) {
                assert!((e.score - o.0).abs() < 1e-9);
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]

        #[test]
        fn order_invariant_under_monotone_transform(
            xs in prop::collection::vec(prop::collection::vec(0.0f64..1.0, 2), 1..40),
            a in 0.1f64..10.0,
            b in -5.0f64..5.0,
        ) {
            let pool: Vec<FeatureVector> = xs.iter().enumerate().map(|(i, x)| fv(&format!("z{i:02}"), x.clone())).collect();
            let m = centroid_model(vec![0.5, 0.5], vec![0.1, 0.2]);
            let h = rank_hitlist(&m, &pool, 100, 0).unwrap();
            // re-rank the transformed scores with the same comparator
            let mut t: Vec<(f64, String)> = h.entries.iter().map(|e| (a * e.score + b, e.zone_id.clone())).collect();
            t.sort_by(|p, q| q.0.total_cmp(&p.0).then_with(|| p.1.cmp(&q.1)));
            let got: Vec<&String> = h.entries.iter().map(|e| &e.zone_id).collect();
            let expect: Vec<&String> = t.iter().map(|p| &p.1).collect();
            prop_assert_eq!(got, expect);
        }
    }
}
