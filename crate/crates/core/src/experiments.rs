//! Reproducible experiment harnesses over the synthetic corpus.

use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::ballpark::{
    classify, split_class_experiment, train_class, Augmenter, ClassId, ClassModel, MorphAugmenter, PoolStats,
    Provenance, Sample, SplitReport, TrainConfig, TrainContext,
};
use crate::corpus::{Corpus, CorpusInstance, CorpusSpec, Style};
use crate::error::{Error, Result};
use crate::features::{build_codebook, quantize, Codebook, FeatureConfig, FeatureVector};
use crate::harvest::{Action, Engine, EngineConfig, LabelBatch, LabelInput};
use crate::imaging::BinaryImage;
use crate::ranking::{labeling_effect, LabelingEffect, UncertaintyCurves};

/// Codebook and features for every corpus instance.
pub struct Featurized {
    pub corpus: Corpus,
    pub config: FeatureConfig,
    pub codebook: Codebook,
    pub features: Vec<FeatureVector>,
    pub pool: PoolStats,
}

impl Featurized {
    /// Builds a `k`-word codebook from the first `codebook_per_class`
    /// instances of each class and quantizes everything.
    pub fn new(corpus: Corpus, config: FeatureConfig, k: usize, codebook_per_class: usize, seed: u64) -> Result<Self> {
        let zones: Vec<&BinaryImage> = corpus
            .instances
            .iter()
            .filter(|i| i.index < codebook_per_class)
            .map(|i| &i.image)
            .collect();
        let codebook = build_codebook(&zones, &config, k, seed, 20_000)?;
        let features = corpus
            .instances
            .iter()
            .map(|i| quantize(&i.id, &i.image, &codebook, &config))
            .collect::<Result<Vec<_>>>()?;
        let pool = PoolStats::from_vectors(features.iter().map(|f| f.histogram.as_slice()))?;
        Ok(Self {
            corpus,
            config,
            codebook,
            features,
            pool,
        })
    }

    pub fn sample(&self, i: usize) -> Result<Sample> {
        let inst = &self.corpus.instances[i];
        Ok(Sample::new(self.features[i].clone(), ClassId::new(&inst.label)?, Provenance::Confirmed))
    }

    /// Morph augmenter over the corpus images.
    pub fn augmenter(&self) -> MorphAugmenter<impl Fn(&str) -> Option<BinaryImage> + Send + Sync> {
        let images: Arc<HashMap<String, BinaryImage>> = Arc::new(
            self.corpus
                .instances
                .iter()
                .map(|i| (i.id.clone(), i.image.clone()))
                .collect(),
        );
        MorphAugmenter::new(move |id: &str| images.get(id).cloned(), self.codebook.clone(), self.config)
    }
}

/// Trains one model per class from `train` (indices into the corpus) with
/// every other class's samples as the negative pool.
pub fn train_all(f: &Featurized, train: &[usize], config: &TrainConfig, augmenter: Option<&dyn Augmenter>) -> Result<Vec<ClassModel>> {
    let mut by_class: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for &i in train {
        by_class.entry(f.corpus.instances[i].label.as_str()).or_default().push(i);
    }
    let mut models = Vec::with_capacity(by_class.len());
    for (label, idx) in &by_class {
        let samples = idx.iter().map(|&i| f.sample(i)).collect::<Result<Vec<_>>>()?;
        let negatives: Vec<&FeatureVector> = train
            .iter()
            .filter(|&&i| f.corpus.instances[i].label != *label)
            .map(|&i| &f.features[i])
            .collect();
        let ctx = TrainContext {
            negatives: &negatives,
            augmenter,
            ..TrainContext::new(label, &f.pool)
        };
        models.push(train_class(&samples, &ctx, config)?);
    }
    Ok(models)
}

fn top1(f: &Featurized, models: &[ClassModel], i: usize) -> Result<bool> {
    let top = classify(&f.features[i].histogram, models, 1)?;
    Ok(top.first().is_some_and(|h| h.class_key == f.corpus.instances[i].label))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerfDensityConfig {
    pub corpus: CorpusSpec,
    pub label_counts: Vec<usize>,
    pub test_per_class: usize,
    pub codebook_k: usize,
    pub codebook_per_class: usize,
    pub features: FeatureConfig,
    pub train: TrainConfig,
    pub augment: bool,
}

impl Default for PerfDensityConfig {
    fn default() -> Self {
        Self {
            corpus: CorpusSpec::default(),
            label_counts: vec![1, 2, 5, 10, 20, 50, 100, 200],
            test_per_class: 20,
            codebook_k: 32,
            codebook_per_class: 10,
            features: FeatureConfig::synthetic(),
            train: TrainConfig::default(),
            augment: true,
        }
    }
}

/// One scatter point: a class at a label count, evaluated on one book's
/// share of the held-out set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerfRow {
    pub class_key: String,
    pub n_labels: usize,
    pub test_n: usize,
    pub accuracy: f64,
    pub book_id: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerfDensityReport {
    pub rows: Vec<PerfRow>,
    /// `(n_labels, pooled held-out top-1 accuracy)`.
    pub mean_accuracy: Vec<(usize, f64)>,
}

impl PerfDensityReport {
    pub fn accuracy_at(&self, n: usize) -> Option<f64> {
        self.mean_accuracy.iter().find(|(k, _)| *k == n).map(|(_, a)| *a)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("class_key,n_labels,test_n,accuracy,book_id\n");
        for r in &self.rows {
            s.push_str(&format!("{},{},{},{:.6},{}\n", r.class_key, r.n_labels, r.test_n, r.accuracy, r.book_id));
        }
        s
    }
}

/// Held-out accuracy as a function of labels per class. The last
/// `test_per_class` instances of every class form the test set; the first
/// `n` are the labels.
pub fn perf_density(cfg: &PerfDensityConfig) -> Result<PerfDensityReport> {
    let max_n = cfg.label_counts.iter().copied().max().unwrap_or(0);
    let spec = CorpusSpec {
        per_class: max_n + cfg.test_per_class,
        ..cfg.corpus.clone()
    };
    let f = Featurized::new(Corpus::generate(&spec)?, cfg.features, cfg.codebook_k, cfg.codebook_per_class, spec.seed)?;
    perf_density_on(&f, cfg)
}

pub fn perf_density_on(f: &Featurized, cfg: &PerfDensityConfig) -> Result<PerfDensityReport> {
    let per_class = f.corpus.spec.per_class;
    if cfg.label_counts.iter().any(|&n| n + cfg.test_per_class > per_class) {
        return Err(Error::param("corpus too small for the requested label counts"));
    }
    let test: Vec<usize> = (0..f.corpus.instances.len())
        .filter(|&i| f.corpus.instances[i].index >= per_class - cfg.test_per_class)
        .collect();
    let aug = f.augmenter();
    let augmenter: Option<&dyn Augmenter> = if cfg.augment { Some(&aug) } else { None };

    let mut rows = Vec::new();
    let mut mean_accuracy = Vec::new();
    for &n in &cfg.label_counts {
        let train: Vec<usize> = (0..f.corpus.instances.len())
            .filter(|&i| f.corpus.instances[i].index < n)
            .collect();
        let models = train_all(f, &train, &cfg.train, augmenter)?;
        let mut cells: BTreeMap<(String, String), (usize, usize)> = BTreeMap::new();
        let mut hits = 0;
        for &i in &test {
            let inst: &CorpusInstance = &f.corpus.instances[i];
            let ok = top1(f, &models, i)?;
            hits += ok as usize;
            let c = cells.entry((inst.label.clone(), inst.book_id.clone())).or_default();
            c.0 += ok as usize;
            c.1 += 1;
        }
        for ((class_key, book_id), (h, t)) in cells {
            rows.push(PerfRow {
                class_key,
                n_labels: n,
                test_n: t,
                accuracy: h as f64 / t as f64,
                book_id,
            });
        }
        mean_accuracy.push((n, if test.is_empty() { 0.0 } else { hits as f64 / test.len() as f64 }));
    }
    Ok(PerfDensityReport { rows, mean_accuracy })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitClassConfig {
    pub corpus: CorpusSpec,
    /// Labeled samples of the studied class.
    pub n: usize,
    /// Labeled samples of each other class.
    pub n_other: usize,
    pub test_per_class: usize,
    pub codebook_k: usize,
    pub features: FeatureConfig,
    pub train: TrainConfig,
    pub seed: u64,
}

impl SplitClassConfig {
    /// A single-style class: splitting halves its data for nothing.
    pub fn reference() -> Self {
        Self {
            corpus: CorpusSpec {
                classes: 10,
                per_class: 60,
                ..CorpusSpec::default()
            },
            n: 40,
            n_other: 40,
            test_per_class: 20,
            codebook_k: 32,
            features: FeatureConfig::synthetic(),
            train: TrainConfig::default(),
            seed: 7,
        }
    }

    /// Every class written in two very different styles, few labels: a
    /// single centroid sits between the modes.
    pub fn planted() -> Self {
        let mut c = Self::reference();
        c.corpus.styles = vec![Style::plain(), Style::heavy()];
        c.n = 16;
        c.n_other = 16;
        c
    }
}

/// Lumped versus k-means-split models for the first vocabulary word.
pub fn split_class(cfg: &SplitClassConfig) -> Result<SplitReport> {
    let corpus = Corpus::generate(&cfg.corpus)?;
    let per_class = cfg.corpus.per_class;
    if cfg.n.max(cfg.n_other) + cfg.test_per_class > per_class {
        return Err(Error::param("corpus too small for the split experiment"));
    }
    let f = Featurized::new(corpus, cfg.features, cfg.codebook_k, 10, cfg.corpus.seed)?;
    let target = f.corpus.vocabulary[0].clone();
    let mut samples = Vec::new();
    let mut negatives = Vec::new();
    let mut eval = Vec::new();
    for (i, inst) in f.corpus.instances.iter().enumerate() {
        if inst.index >= per_class - cfg.test_per_class {
            eval.push(f.sample(i)?);
        } else if inst.label == target && inst.index < cfg.n {
            samples.push(f.sample(i)?);
        } else if inst.label != target && inst.index < cfg.n_other {
            negatives.push(f.sample(i)?);
        }
    }
    split_class_experiment(&samples, &negatives, &eval, &f.pool, &cfg.train, cfg.seed)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabelingEffectConfig {
    pub corpus: CorpusSpec,
    /// Labels per class before the measurement.
    pub initial: usize,
    /// Hit-list positives confirmed for the studied class.
    pub added: usize,
    pub engine: EngineConfig,
}

impl Default for LabelingEffectConfig {
    fn default() -> Self {
        Self {
            corpus: CorpusSpec {
                classes: 10,
                per_class: 40,
                ..CorpusSpec::default()
            },
            initial: 5,
            added: 9,
            engine: EngineConfig {
                codebook_k: 32,
                debounce_ms: 0,
                cold_every: 1,
                ..EngineConfig::synthetic()
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabelingEffectReport {
    pub before: UncertaintyCurves,
    pub after: UncertaintyCurves,
    pub effect: LabelingEffect,
    /// Zones confirmed between the two measurements.
    pub confirmed: Vec<String>,
}

/// Curves of the first vocabulary word before and after confirming
/// `added` true positives from its hit list.
pub fn labeling_effect_experiment(cfg: &LabelingEffectConfig) -> Result<LabelingEffectReport> {
    let corpus = Corpus::generate(&cfg.corpus)?;
    let target = corpus.vocabulary[0].clone();
    let mut engine = Engine::new(cfg.engine.clone());
    let mut truth = BTreeMap::new();
    let mut initial = Vec::new();
    for inst in &corpus.instances {
        let zone = engine.add_word_page(&inst.book_id, &inst.id, inst.image.clone())?;
        if inst.index < cfg.initial {
            initial.push(LabelInput {
                zone_id: zone.clone(),
                label: inst.label.clone(),
                action: Action::New,
                mode: None,
            });
        }
        truth.insert(zone, inst.label.clone());
    }
    engine.prepare()?;
    let batch = |labels| LabelBatch {
        batch_id: None,
        user: "experiment".into(),
        labels,
    };
    engine.submit_labels(batch(initial), 0)?;
    engine.run_cycle(0)?;
    let curves = |e: &Engine| {
        e.class(&target)
            .and_then(|c| c.curves.clone())
            .ok_or_else(|| Error::CurvesUndefined(target.clone()))
    };
    let before = curves(&engine)?;
    let confirmed: Vec<String> = engine
        .hitlist(&target)?
        .entries
        .iter()
        .filter(|e| !e.already_labeled && truth.get(&e.zone_id) == Some(&target))
        .take(cfg.added)
        .map(|e| e.zone_id.clone())
        .collect();
    if confirmed.len() < cfg.added {
        return Err(Error::domain(format!(
            "hit list holds only {} true positives",
            confirmed.len()
        )));
    }
    let labels = confirmed
        .iter()
        .map(|z| LabelInput {
            zone_id: z.clone(),
            label: target.clone(),
            action: Action::Confirm,
            mode: None,
        })
        .collect();
    engine.submit_labels(batch(labels), 1)?;
    engine.run_cycle(1)?;
    let after = curves(&engine)?;
    Ok(LabelingEffectReport {
        effect: labeling_effect(&before, &after)?,
        before,
        after,
        confirmed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tiny_perf_density_runs() {
        let cfg = PerfDensityConfig {
            corpus: CorpusSpec {
                classes: 4,
                ..CorpusSpec::default()
            },
            label_counts: vec![1, 3],
            test_per_class: 3,
            codebook_k: 8,
            codebook_per_class: 3,
            ..PerfDensityConfig::default()
        };
        let r = perf_density(&cfg).unwrap();
        assert_eq!(r.mean_accuracy.len(), 2);
        assert!(r.to_csv().starts_with("class_key,n_labels,test_n,accuracy,book_id\n"));
        let tests: usize = r.rows.iter().filter(|row| row.n_labels == 1).map(|row| row.test_n).sum();
        assert_eq!(tests, 12);
    }
}
