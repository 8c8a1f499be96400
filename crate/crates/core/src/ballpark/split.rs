use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{classify, train_class, ClassId, ClassModel, PoolStats, Sample, TrainConfig, TrainContext};
use crate::error::{Error, Result};
use crate::features::{kmeans, FeatureVector};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitReport {
    pub class_key: String,
    pub lumped_accuracy: f64,
    pub split_accuracy: f64,
    pub n: usize,
    pub n_half: usize,
    /// Sizes of the two k-means subclasses.
    pub sub_sizes: [usize; 2],
    pub eval_n: usize,
}

/// Compares one model for a class against two models trained on a 2-means
/// split of its samples. Both schemes are scored by top-1 accuracy over the
/// whole evaluation set; a subclass hit counts as a hit for its parent.
pub fn split_class_experiment(
    samples: &[Sample],
    negatives: &[Sample],
    eval: &[Sample],
    pool: &PoolStats,
    config: &TrainConfig,
    seed: u64,
) -> Result<SplitReport> {
    let Some(first) = samples.first() else {
        return Err(Error::param("split experiment needs samples"));
    };
    let class = first.label.clone();
    if samples.len() < 2 {
        return Err(Error::param("split experiment needs at least 2 samples"));
    }

    let mut others: BTreeMap<String, Vec<&Sample>> = BTreeMap::new();
    for s in negatives {
        others.entry(s.label.class_key.clone()).or_default().push(s);
    }
    let mut other_models = Vec::new();
    for (key, own) in &others {
        let negs: Vec<&FeatureVector> = negatives
            .iter()
            .filter(|s| &s.label.class_key != key)
            .chain(samples)
            .map(|s| &s.feature)
            .collect();
        let own: Vec<Sample> = own.iter().map(|s| (*s).clone()).collect();
        other_models.push(train_with(&own, key, &negs, pool, config)?);
    }

    let negs_all: Vec<&FeatureVector> = negatives.iter().map(|s| &s.feature).collect();
    let lumped = train_with(samples, &class.class_key, &negs_all, pool, config)?;

    let points: Vec<Vec<f64>> = samples.iter().map(|s| s.feature.histogram.clone()).collect();
    let km = kmeans(&points, 2, seed, 100)?;
    let mut subs: [Vec<Sample>; 2] = [Vec::new(), Vec::new()];
    for (s, &a) in samples.iter().zip(&km.assignments) {
        let mut s = s.clone();
        s.label = ClassId {
            label: format!("{}#{}", class.label, a + 1),
            class_key: format!("{}#{}", class.class_key, a + 1),
        };
        subs[a].push(s);
    }
    let mut split_models = Vec::new();
    for a in 0..2 {
        let negs: Vec<&FeatureVector> = negatives
            .iter()
            .chain(&subs[1 - a])
            .map(|s| &s.feature)
            .collect();
        let key = format!("{}#{}", class.class_key, a + 1);
        split_models.push(train_with(&subs[a], &key, &negs, pool, config)?);
    }

    let score = |models: &[ClassModel]| -> Result<f64> {
        let mut hits = 0usize;
        for e in eval {
            let top = classify(&e.feature.histogram, models, 1)?;
            let predicted = top.first().map(|h| parent_key(&h.class_key, &class.class_key));
            if predicted == Some(e.label.class_key.as_str()) {
                hits += 1;
            }
        }
        Ok(if eval.is_empty() { 0.0 } else { hits as f64 / eval.len() as f64 })
    };
    let mut lumped_set = other_models.clone();
    lumped_set.push(lumped);
    let mut split_set = other_models;
    split_set.extend(split_models);

    Ok(SplitReport {
        class_key: class.class_key.clone(),
        lumped_accuracy: score(&lumped_set)?,
        split_accuracy: score(&split_set)?,
        n: samples.len(),
        n_half: samples.len() / 2,
        sub_sizes: [subs[0].len(), subs[1].len()],
        eval_n: eval.len(),
    })
}

fn parent_key<'a>(key: &'a str, parent: &'a str) -> &'a str {
    match key.strip_prefix(parent) {
        Some("#1") | Some("#2") => parent,
        _ => key,
    }
}

fn train_with(
    samples: &[Sample],
    key: &str,
    negatives: &[&FeatureVector],
    pool: &PoolStats,
    config: &TrainConfig,
) -> Result<ClassModel> {
    let ctx = TrainContext {
        negatives,
        ..TrainContext::new(key, pool)
    };
    train_class(samples, &ctx, config)
}
