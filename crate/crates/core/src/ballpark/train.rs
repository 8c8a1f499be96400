use rand::seq::index::sample as sample_indices;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::model::{Exemplar, ModelPayload, PoolStats, Provenance, Sample};
use super::svm::{train_linear_svm, SvmParams};
use super::{select_ballpark, Augmenter, ClassModel, Regime};
use crate::error::{Error, Result};
use crate::features::FeatureVector;
use crate::util::stable_hash;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Classes with fewer human labels are topped up with synthetic
    /// variants to this many training vectors.
    pub augment_target: usize,
    /// Negative pool size as a multiple of the positive count.
    pub negative_ratio: usize,
    pub svm: SvmParams,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            augment_target: 20,
            negative_ratio: 10,
            svm: SvmParams {
                c: 10.0,
                ..SvmParams::default()
            },
            seed: 7,
        }
    }
}

/// Everything a class needs from the rest of the collection.
pub struct TrainContext<'a> {
    pub class_key: &'a str,
    pub label: &'a str,
    pub pool: &'a PoolStats,
    /// Labeled samples of other classes.
    pub negatives: &'a [&'a FeatureVector],
    /// Zones users rejected for this class; used as extra negatives by the
    /// SVM regimes only.
    pub rejected: &'a [&'a FeatureVector],
    pub previous_version: u64,
    pub style: Option<String>,
    pub augmenter: Option<&'a dyn Augmenter>,
}

impl<'a> TrainContext<'a> {
    pub fn new(class_key: &'a str, pool: &'a PoolStats) -> Self {
        Self {
            class_key,
            label: class_key,
            pool,
            negatives: &[],
            rejected: &[],
            previous_version: 0,
            style: None,
            augmenter: None,
        }
    }
}

/// Trains the model matching the class's label count.
pub fn train_class(samples: &[Sample], ctx: &TrainContext<'_>, config: &TrainConfig) -> Result<ClassModel> {
    let dim = ctx.pool.dim();
    for s in samples {
        if s.label.class_key != ctx.class_key {
            return Err(Error::domain(format!(
                "sample {} belongs to {}, not {}",
                s.zone_id, s.label.class_key, ctx.class_key
            )));
        }
        if s.feature.dim() != dim {
            return Err(Error::Dimension {
                expected: dim,
                got: s.feature.dim(),
            });
        }
    }
    let human: Vec<&Sample> = samples.iter().filter(|s| s.provenance.is_human()).collect();
    let n = human.len();
    let regime = select_ballpark(n);
    let mut model = ClassModel {
        class_key: ctx.class_key.to_string(),
        label: ctx.label.to_string(),
        regime,
        n_labels: n,
        n_effective: 0,
        style: ctx.style.clone(),
        version: ctx.previous_version + 1,
        payload: ModelPayload::None,
    };
    if n == 0 {
        return Ok(model);
    }

    let mut training: Vec<(String, Vec<f64>, Provenance)> = samples
        .iter()
        .map(|s| (s.zone_id.clone(), s.feature.histogram.clone(), s.provenance))
        .collect();
    if let Some(aug) = ctx.augmenter {
        let mut j = 0;
        while training.len() < config.augment_target && j < config.augment_target {
            let src = human[j % n];
            let seed = (config.seed ^ stable_hash(&src.zone_id)).wrapping_add(j as u64);
            if let Some(fv) = aug.augment(src, j, seed)? {
                training.push((fv.zone_id, fv.histogram, Provenance::Synthetic));
            }
            j += 1;
        }
    }
    model.n_effective = training.len();

    model.payload = match regime {
        Regime::ZeroLabel => ModelPayload::None,
        Regime::OneNN => ModelPayload::Exemplars {
            exemplars: training
                .into_iter()
                .map(|(zone_id, vector, provenance)| Exemplar {
                    zone_id,
                    vector,
                    provenance,
                })
                .collect(),
        },
        Regime::NearestCentroid => {
            let vectors: Vec<&[f64]> = training.iter().map(|t| t.1.as_slice()).collect();
            let (mean, var) = shrunk_centroid(&vectors, ctx.pool);
            ModelPayload::Centroid { mean, var }
        }
        Regime::Svm | Regime::DeepEligible => {
            let positives: Vec<&[f64]> = training.iter().map(|t| t.1.as_slice()).collect();
            let (w, b) = train_svm(&positives, ctx, config)?;
            ModelPayload::Linear { w, b }
        }
    };
    Ok(model)
}

/// Mean and diagonal variance, the variance shrunk toward the pool's with
/// weight `1 / (m + 1)` and floored.
pub(crate) fn shrunk_centroid(vectors: &[&[f64]], pool: &PoolStats) -> (Vec<f64>, Vec<f64>) {
    let dim = pool.dim();
    let m = vectors.len() as f64;
    let mut mean = vec![0.0; dim];
    for v in vectors {
        for d in 0..dim {
            mean[d] += v[d];
        }
    }
    mean.iter_mut().for_each(|x| *x /= m);
    let mut var = vec![0.0; dim];
    for v in vectors {
        for d in 0..dim {
            var[d] += (v[d] - mean[d]) * (v[d] - mean[d]);
        }
    }
    let lambda = 1.0 / (m + 1.0);
    let floor = pool.variance_floor();
    for d in 0..dim {
        let s2 = var[d] / m;
        var[d] = ((1.0 - lambda) * s2 + lambda * pool.var[d]).max(floor);
    }
    (mean, var)
}

fn train_svm(positives: &[&[f64]], ctx: &TrainContext<'_>, config: &TrainConfig) -> Result<(Vec<f64>, f64)> {
    let seed = config.seed ^ stable_hash(ctx.class_key);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let budget = (config.negative_ratio * positives.len()).min(ctx.negatives.len());
    let mut picked = sample_indices(&mut rng, ctx.negatives.len(), budget).into_vec();
    picked.sort_unstable();

    let std: Vec<f64> = ctx.pool.var.iter().map(|v| (v + super::model::MIN_VARIANCE).sqrt()).collect();
    let scale = |x: &[f64]| -> Vec<f64> {
        x.iter()
            .zip(&ctx.pool.mean)
            .zip(&std)
            .map(|((v, m), s)| (v - m) / s)
            .collect()
    };
    let mut xs: Vec<Vec<f64>> = positives.iter().map(|p| scale(p)).collect();
    let mut ys = vec![true; xs.len()];
    for i in picked {
        xs.push(scale(&ctx.negatives[i].histogram));
        ys.push(false);
    }
    for r in ctx.rejected {
        xs.push(scale(&r.histogram));
        ys.push(false);
    }
    let params = SvmParams {
        seed,
        ..config.svm.clone()
    };
    let svm = train_linear_svm(&xs, &ys, &params)?;
    // fold the standardization into the raw-feature decision function
    let w: Vec<f64> = svm.w.iter().zip(&std).map(|(w, s)| w / s).collect();
    let b = svm.b - w.iter().zip(&ctx.pool.mean).map(|(w, m)| w * m).sum::<f64>();
    Ok((w, b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ballpark::ClassId;
    use crate::features::Norm;
    use proptest::prelude::*;
    use rand::Rng;

    pub(crate) fn fv(id: &str, h: Vec<f64>) -> FeatureVector {
        FeatureVector {
            zone_id: id.into(),
            histogram: h,
            norm: Norm::L1,
            empty: false,
        }
    }

    fn sample(id: &str, class: &str, h: Vec<f64>) -> Sample {
        Sample::new(fv(id, h), ClassId::new(class).unwrap(), Provenance::Confirmed)
    }

    fn pool_of(samples: &[Sample]) -> PoolStats {
        PoolStats::from_vectors(samples.iter().map(|s| s.feature.histogram.as_slice())).unwrap()
    }

    #[test]
    fn zero_samples_give_stub() {
        let pool = PoolStats::from_vectors([[0.0, 1.0].as_slice()]).unwrap();
        let m = train_class(&[], &TrainContext::new("x", &pool), &TrainConfig::default()).unwrap();
        assert_eq!(m.regime, Regime::ZeroLabel);
        assert!(!m.is_trained());
        assert_eq!(m.version, 1);
    }

    #[test]
    fn one_sample_is_one_nn() {
        let s = vec![sample("z1", "a", vec![0.2, 0.8])];
        let pool = pool_of(&s);
        let m = train_class(&s, &TrainContext::new("a", &pool), &TrainConfig::default()).unwrap();
        assert_eq!(m.regime, Regime::OneNN);
        assert_eq!(m.classify_score(&[0.2, 0.8]), Some(-0.0));
    }

    #[test]
    fn identical_vectors_have_floor_variance() {
        let s: Vec<Sample> = (0..5).map(|i| sample(&format!("z{i}"), "a", vec![0.25, 0.5, 0.25])).collect();
        let pool = pool_of(&s);
        let m = train_class(&s, &TrainContext::new("a", &pool), &TrainConfig::default()).unwrap();
        assert_eq!(m.regime, Regime::NearestCentroid);
        let ModelPayload::Centroid { mean, var } = m.payload else { panic!() };
        assert_eq!(mean, vec![0.25, 0.5, 0.25]);
        assert!(var.iter().all(|&v| v == pool.variance_floor()));
    }

    #[test]
    fn wrong_class_or_dimension_rejected() {
        let s = vec![sample("z", "a", vec![1.0])];
        let pool = PoolStats::from_vectors([[0.0, 1.0].as_slice()]).unwrap();
        assert!(matches!(
            train_class(&s, &TrainContext::new("a", &pool), &TrainConfig::default()),
            Err(Error::Dimension { .. })
        ));
        let pool = pool_of(&s);
        assert!(train_class(&s, &TrainContext::new("b", &pool), &TrainConfig::default()).is_err());
    }

    #[test]
    fn svm_regime_separates_planted_clusters() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let pos: Vec<Sample> = (0..30)
            .map(|i| sample(&format!("p{i}"), "a", vec![0.7 + rng.random_range(-0.1..0.1), 0.3 + rng.random_range(-0.1..0.1)]))
            .collect();
        let negs: Vec<FeatureVector> = (0..60)
            .map(|i| fv(&format!("n{i}"), vec![0.2 + rng.random_range(-0.1..0.1), 0.8 + rng.random_range(-0.1..0.1)]))
            .collect();
        let pool = PoolStats::from_vectors(
            pos.iter().map(|s| s.feature.histogram.as_slice()).chain(negs.iter().map(|f| f.histogram.as_slice())),
        )
        .unwrap();
        let neg_refs: Vec<&FeatureVector> = negs.iter().collect();
        let ctx = TrainContext {
            negatives: &neg_refs,
            ..TrainContext::new("a", &pool)
        };
        let m = train_class(&pos, &ctx, &TrainConfig::default()).unwrap();
        assert_eq!(m.regime, Regime::Svm);
        for s in &pos {
            assert!(m.log_density(&s.feature.histogram).unwrap() > 0.0);
        }
        for n in &negs {
            assert!(m.log_density(&n.histogram).unwrap() < 0.0);
        }
    }

    struct Shift;
    impl Augmenter for Shift {
        fn augment(&self, s: &Sample, index: usize, _seed: u64) -> Result<Option<FeatureVector>> {
            let h = s.feature.histogram.iter().map(|v| v + 0.01 * (index as f64 + 1.0)).collect();
            Ok(Some(fv(&format!("{}~aug{index}", s.zone_id), h)))
        }
    }

    #[test]
    fn few_labels_are_augmented_to_target() {
        let s: Vec<Sample> = (0..3).map(|i| sample(&format!("z{i}"), "a", vec![i as f64, 1.0])).collect();
        let pool = pool_of(&s);
        let ctx = TrainContext {
            augmenter: Some(&Shift),
            ..TrainContext::new("a", &pool)
        };
        let m = train_class(&s, &ctx, &TrainConfig::default()).unwrap();
        assert_eq!(m.n_labels, 3);
        assert_eq!(m.n_effective, 20);
        assert_eq!(m.regime, Regime::NearestCentroid);

        let one = train_class(&s[..1], &ctx, &TrainConfig::default()).unwrap();
        let ModelPayload::Exemplars { exemplars } = one.payload else { panic!() };
        assert_eq!(exemplars.len(), 20);
        assert_eq!(exemplars.iter().filter(|e| e.provenance == Provenance::Synthetic).count(), 19);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]

        #[test]
        fn adding_the_centroid_keeps_mean_and_shrinks_variance(
            rows in prop::collection::vec(prop::collection::vec(0.0f64..1.0, 3), 2..12)
        ) {
            let samples: Vec<Sample> = rows.iter().enumerate().map(|(i, r)| sample(&format!("z{i}"), "a", r.clone())).collect();
            let pool = PoolStats::from_vectors(rows.iter().map(|r| r.as_slice())).unwrap();
            let vecs: Vec<&[f64]> = rows.iter().map(|r| r.as_slice()).collect();
            let (mean, var) = shrunk_centroid(&vecs, &pool);
            let mut more = samples.clone();
            more.push(sample("c", "a", mean.clone()));
            let vecs2: Vec<&[f64]> = more.iter().map(|s| s.feature.histogram.as_slice()).collect();
            let (mean2, var2) = shrunk_centroid(&vecs2, &pool);
            for d in 0..3 {
                prop_assert!((mean2[d] - mean[d]).abs() < 1e-12);
                prop_assert!(var2[d] <= var[d] + 1e-15);
            }
        }
    }
}
