use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::curve::{harvest_curve, HarvestCurve};
use super::events::{Action, LabelEvent, LabelState, Mode, PositiveLabel};
use super::scheduler::{book_heat, HeatStatus, Reason, RecomputeQueue, RecomputeRequest};
use crate::ballpark::{
    train_class, Augmenter, ClassId, ClassModel, MorphAugmenter, PoolStats, Regime, Sample, TrainConfig,
    TrainContext,
};
use crate::error::{Error, Result};
use crate::features::{build_codebook, quantize, Codebook, FeatureConfig, FeatureVector};
use crate::imaging::{binarize, BinaryImage, GrayImage};
use crate::ranking::{
    near_boundary_count, prospect_score, rank_hitlist, uncertainty_curves, HitList, Prospect, UncertaintyCurves,
};
use crate::segmentation::{band_strip, segment_page, LineBand, LineParams, Rect, WordParams, WordZone, ZoneSource};
use crate::store;
use crate::Timestamp;

const DAY_MS: i64 = 24 * 60 * 60 * 1000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EngineConfig {
    pub features: FeatureConfig,
    pub codebook_k: usize,
    pub codebook_seed: u64,
    pub max_codebook_descriptors: usize,
    pub lines: LineParams,
    pub words: WordParams,
    pub train: TrainConfig,
    /// Top up small classes with morphed variants.
    pub augment: bool,
    /// Unlabeled entries per hit list.
    pub hitlist_limit: usize,
    /// Residual pool size as a multiple of `hitlist_limit`.
    pub residual_factor: usize,
    pub debounce_ms: i64,
    /// Labels within `hot_window_ms` that make a book hot.
    pub hot_threshold: usize,
    pub hot_window_ms: i64,
    /// Cold books are served on every `cold_every`-th cycle.
    pub cold_every: u64,
    /// Labels per day at which the velocity bonus saturates.
    pub velocity_cap: f64,
    pub retry_backoff_ms: i64,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            features: FeatureConfig::pages(),
            codebook_k: 256,
            codebook_seed: 7,
            max_codebook_descriptors: 20_000,
            lines: LineParams::default(),
            words: WordParams::default(),
            train: TrainConfig::default(),
            augment: true,
            hitlist_limit: 50,
            residual_factor: 10,
            debounce_ms: 5_000,
            hot_threshold: 10,
            hot_window_ms: 7 * DAY_MS,
            cold_every: 10,
            velocity_cap: 50.0,
            retry_backoff_ms: 60_000,
        }
    }
}

impl EngineConfig {
    /// Settings for the desk-scale synthetic corpus.
    pub fn synthetic() -> Self {
        Self {
            features: FeatureConfig::synthetic(),
            codebook_k: 32,
            ..Self::default()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Book {
    pub book_id: String,
    pub title: String,
    pub page_ids: Vec<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Page {
    pub page_id: String,
    pub book_id: String,
    pub image_filename: String,
    /// Original scan, when ingested from a grayscale image.
    pub gray: Option<GrayImage>,
    pub mask: BinaryImage,
    pub bands: Vec<LineBand>,
    pub zone_ids: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ZoneRecord {
    #[serde(flatten)]
    pub zone: WordZone,
    pub page_id: String,
    pub book_id: String,
}

/// Everything the engine knows about one class.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ClassState {
    pub class_key: String,
    pub label: String,
    pub model: Option<ClassModel>,
    pub hitlist: Option<HitList>,
    pub curves: Option<UncertaintyCurves>,
    /// Scores of the presumed-negative pool behind `curves`.
    pub residual_scores: Vec<f64>,
    /// Zones that have appeared in any of this class's hit lists.
    pub shown: BTreeSet<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub last_error: Option<String>,
}

impl ClassState {
    fn new(class_key: &str, label: &str) -> Self {
        Self {
            class_key: class_key.to_string(),
            label: label.to_string(),
            ..Self::default()
        }
    }

    pub fn model_version(&self) -> u64 {
        self.model.as_ref().map_or(0, |m| m.version)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelInput {
    pub zone_id: String,
    pub label: String,
    pub action: Action,
    /// Defaults to widening for `new`, deepening otherwise.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mode: Option<Mode>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelBatch {
    /// Client-chosen id; resubmitting it returns the first receipt.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub batch_id: Option<String>,
    #[serde(default)]
    pub user: String,
    pub labels: Vec<LabelInput>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RejectedLabel {
    pub index: usize,
    pub zone_id: String,
    pub reason: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubmitReceipt {
    pub batch_id: String,
    /// Event ids, in submission order.
    pub accepted: Vec<u64>,
    pub rejected: Vec<RejectedLabel>,
    pub requests: Vec<RecomputeRequest>,
    #[serde(default)]
    pub duplicate: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassSummary {
    pub class_key: String,
    pub label: String,
    pub n_labels: usize,
    pub regime: Regime,
    pub model_version: u64,
    pub eur: Option<f64>,
    pub pending: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetrainedClass {
    pub class_key: String,
    pub version: u64,
}

/// Journal entry of one committed cycle; enough to replay it.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CycleRecord {
    pub cycle: u64,
    pub now: Timestamp,
    /// Last event id visible to the cycle.
    pub watermark: u64,
    pub retrained: Vec<RetrainedClass>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CycleDurations {
    pub plan_ms: f64,
    pub execute_ms: f64,
    pub commit_ms: f64,
    /// Per retrained class, in processing order.
    pub per_class_ms: Vec<(String, f64)>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CycleFailure {
    pub class_key: String,
    pub error: String,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CycleReport {
    pub cycle: u64,
    pub classes_retrained: Vec<RetrainedClass>,
    pub hitlists_regenerated: usize,
    /// Ready requests left for a later cycle because their book is cold.
    pub skipped_cold: Vec<String>,
    pub failures: Vec<CycleFailure>,
    pub durations: CycleDurations,
}

/// Immutable inputs shared by all jobs of a cycle.
struct Snapshot {
    config: EngineConfig,
    features: Arc<BTreeMap<String, FeatureVector>>,
    zone_images: Arc<HashMap<String, BinaryImage>>,
    codebook: Codebook,
    pool: PoolStats,
    labels: BTreeMap<String, PositiveLabel>,
}

struct Job {
    request: Option<RecomputeRequest>,
    class_key: String,
    label: String,
    positives: Vec<Sample>,
    negatives: Vec<FeatureVector>,
    rejected: BTreeSet<String>,
    previous_version: u64,
}

/// Work selected by [`Engine::plan_cycle`]; owns its inputs so it can run
/// without access to the engine.
pub struct CyclePlan {
    pub cycle: u64,
    pub now: Timestamp,
    pub watermark: u64,
    skipped_cold: Vec<String>,
    jobs: Vec<Job>,
    snapshot: Option<Arc<Snapshot>>,
    plan_ms: f64,
}

struct Trained {
    model: ClassModel,
    hitlist: Option<HitList>,
    curves: Option<UncertaintyCurves>,
    residual_scores: Vec<f64>,
}

struct JobResult {
    class_key: String,
    label: String,
    request: Option<RecomputeRequest>,
    outcome: std::result::Result<Trained, String>,
    ms: f64,
}

pub struct CycleOutcome {
    cycle: u64,
    now: Timestamp,
    watermark: u64,
    skipped_cold: Vec<String>,
    results: Vec<JobResult>,
    plan_ms: f64,
    execute_ms: f64,
}

impl CyclePlan {
    pub fn is_empty(&self) -> bool {
        self.jobs.is_empty()
    }

    pub fn classes(&self) -> Vec<&str> {
        self.jobs.iter().map(|j| j.class_key.as_str()).collect()
    }

    /// Trains and ranks every planned class.
    pub fn execute(self) -> CycleOutcome {
        let start = Instant::now();
        let mut results = Vec::with_capacity(self.jobs.len());
        for job in self.jobs {
            let t = Instant::now();
            let outcome = match &self.snapshot {
                Some(s) => run_job(s, &job, self.now).map_err(|e| e.to_string()),
                None => Err("collection has no features yet".to_string()),
            };
            results.push(JobResult {
                class_key: job.class_key,
                label: job.label,
                request: job.request,
                outcome,
                ms: t.elapsed().as_secs_f64() * 1e3,
            });
        }
        CycleOutcome {
            cycle: self.cycle,
            now: self.now,
            watermark: self.watermark,
            skipped_cold: self.skipped_cold,
            results,
            plan_ms: self.plan_ms,
            execute_ms: start.elapsed().as_secs_f64() * 1e3,
        }
    }
}

fn run_job(s: &Snapshot, job: &Job, now: Timestamp) -> Result<Trained> {
    let images = Arc::clone(&s.zone_images);
    let aug = MorphAugmenter::new(
        move |id: &str| images.get(id).cloned(),
        s.codebook.clone(),
        s.config.features,
    );
    let negatives: Vec<&FeatureVector> = job.negatives.iter().collect();
    let rejected: Vec<&FeatureVector> = job.rejected.iter().filter_map(|z| s.features.get(z)).collect();
    let ctx = TrainContext {
        label: &job.label,
        negatives: &negatives,
        rejected: &rejected,
        previous_version: job.previous_version,
        augmenter: if s.config.augment { Some(&aug as &dyn Augmenter) } else { None },
        ..TrainContext::new(&job.class_key, &s.pool)
    };
    let model = train_class(&job.positives, &ctx, &s.config.train)?;
    if !model.is_trained() {
        return Ok(Trained {
            model,
            hitlist: None,
            curves: None,
            residual_scores: Vec::new(),
        });
    }

    let candidates = s.features.values().filter(|f| !job.rejected.contains(&f.zone_id));
    let mut ranked = rank_hitlist(&model, candidates, usize::MAX, now)?;
    let own = |z: &str| s.labels.get(z).filter(|p| p.class_key == job.class_key).map(|p| p.provenance);

    let limit = s.config.hitlist_limit;
    let mut unlabeled = 0;
    let mut cut = ranked.entries.len();
    for (i, e) in ranked.entries.iter().enumerate() {
        if unlabeled == limit {
            cut = i;
            break;
        }
        if own(&e.zone_id).is_none() {
            unlabeled += 1;
        }
    }
    let residual_scores: Vec<f64> = ranked
        .entries
        .iter()
        .filter(|e| !s.labels.contains_key(&e.zone_id))
        .take(s.config.residual_factor.saturating_mul(limit))
        .map(|e| e.score)
        .collect();
    ranked.entries.truncate(cut);
    ranked.mark_labeled(own);

    let human = job.positives.iter().filter(|p| p.provenance.is_human()).count();
    let curves = if human >= 2 && !residual_scores.is_empty() {
        Some(uncertainty_curves(&model, &job.positives, &residual_scores)?)
    } else {
        None
    };
    Ok(Trained {
        model,
        hitlist: Some(ranked),
        curves,
        residual_scores,
    })
}

/// The labeling loop: pages and zones, the event log, class models and the
/// recompute queue.
#[derive(Clone, Debug)]
pub struct Engine {
    pub(crate) config: EngineConfig,
    pub(crate) books: BTreeMap<String, Book>,
    pub(crate) pages: BTreeMap<String, Page>,
    pub(crate) zones: BTreeMap<String, ZoneRecord>,
    pub(crate) zone_images: Arc<HashMap<String, BinaryImage>>,
    pub(crate) codebook: Option<Codebook>,
    pub(crate) features: Arc<BTreeMap<String, FeatureVector>>,
    pub(crate) pool: Option<PoolStats>,
    pub(crate) events: Vec<LabelEvent>,
    pub(crate) state: LabelState,
    pub(crate) classes: BTreeMap<String, ClassState>,
    pub(crate) queue: RecomputeQueue,
    pub(crate) batches: BTreeMap<String, SubmitReceipt>,
    pub(crate) cycle: u64,
    pub(crate) cycles: Vec<CycleRecord>,
    pub(crate) root: Option<PathBuf>,
}

impl Engine {
    pub fn new(config: EngineConfig) -> Self {
        Self {
            config,
            books: BTreeMap::new(),
            pages: BTreeMap::new(),
            zones: BTreeMap::new(),
            zone_images: Arc::new(HashMap::new()),
            codebook: None,
            features: Arc::new(BTreeMap::new()),
            pool: None,
            events: Vec::new(),
            state: LabelState::default(),
            classes: BTreeMap::new(),
            queue: RecomputeQueue::default(),
            batches: BTreeMap::new(),
            cycle: 0,
            cycles: Vec::new(),
            root: None,
        }
    }

    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    pub fn root(&self) -> Option<&std::path::Path> {
        self.root.as_deref()
    }

    pub fn add_book(&mut self, book_id: &str, title: &str) {
        self.books.entry(book_id.to_string()).or_insert_with(|| Book {
            book_id: book_id.to_string(),
            title: title.to_string(),
            page_ids: Vec::new(),
        });
    }

    fn check_new_page(&self, page_id: &str) -> Result<()> {
        if page_id.is_empty() {
            return Err(Error::domain("empty page id"));
        }
        if self.pages.contains_key(page_id) {
            return Err(Error::domain(format!("page {page_id} already exists")));
        }
        Ok(())
    }

    /// Binarizes and segments a scan into line bands and candidate zones.
    pub fn ingest_page(&mut self, book_id: &str, page_id: &str, gray: GrayImage) -> Result<&Page> {
        self.check_new_page(page_id)?;
        let mask = binarize(&gray)?;
        let (bands, zones) = segment_page(page_id, &mask, &self.config.lines, &self.config.words);
        let page = Page {
            page_id: page_id.to_string(),
            book_id: book_id.to_string(),
            image_filename: format!("{page_id}.pgm"),
            gray: Some(gray),
            mask,
            bands,
            zone_ids: Vec::new(),
        };
        let images = zones.iter().map(|z| cut_zone(&page, z)).collect::<Vec<_>>();
        self.insert_page(page, zones.into_iter().zip(images).collect())
    }

    /// A page holding a single pre-cut word; its one zone covers the ink.
    pub fn add_word_page(&mut self, book_id: &str, page_id: &str, mask: BinaryImage) -> Result<String> {
        self.check_new_page(page_id)?;
        if mask.is_empty() {
            return Err(Error::domain("empty image"));
        }
        let (x, y, w, h) = mask.ink_bbox().unwrap_or((0, 0, mask.width(), mask.height()));
        let zone = WordZone::new(page_id, 0, Rect::new(x, y, w, h), ZoneSource::External);
        let id = zone.zone_id.clone();
        let page = Page {
            page_id: page_id.to_string(),
            book_id: book_id.to_string(),
            image_filename: format!("{page_id}.pgm"),
            gray: None,
            bands: vec![LineBand {
                page_id: page_id.to_string(),
                ..LineBand::new(0, mask.height())
            }],
            mask,
            zone_ids: Vec::new(),
        };
        let image = cut_zone(&page, &zone);
        self.insert_page(page, vec![(zone, image)])?;
        Ok(id)
    }

    /// Adds a hand-drawn or externally segmented zone to an existing page.
    pub fn add_external_zone(&mut self, page_id: &str, line: usize, rect: Rect) -> Result<String> {
        let page = self.pages.get(page_id).ok_or_else(|| not_found("page", page_id))?;
        if rect.w == 0 || rect.h == 0 || rect.x + rect.w > page.mask.width() || rect.y + rect.h > page.mask.height() {
            return Err(Error::domain("zone rectangle outside the page"));
        }
        let zone = WordZone::new(page_id, line, rect, ZoneSource::External);
        if self.zones.contains_key(&zone.zone_id) {
            return Ok(zone.zone_id);
        }
        let image = cut_zone(page, &zone);
        let book_id = page.book_id.clone();
        let id = zone.zone_id.clone();
        self.insert_zones(page_id, &book_id, vec![(zone, image)])?;
        if let Some(root) = &self.root {
            store::write_page(root, self, page_id)?;
        }
        Ok(id)
    }

    pub(crate) fn restore_page(&mut self, page: Page, zones: Vec<(WordZone, BinaryImage)>) -> Result<()> {
        self.insert_page(page, zones).map(|_| ())
    }

    /// Installs a codebook with cached features; missing vectors are
    /// recomputed.
    pub(crate) fn restore_features(&mut self, codebook: Codebook, cached: BTreeMap<String, FeatureVector>) -> Result<()> {
        self.codebook = Some(codebook);
        self.features = Arc::new(cached.into_iter().filter(|(z, _)| self.zones.contains_key(z)).collect());
        self.set_codebook_features()
    }

    fn insert_page(&mut self, page: Page, zones: Vec<(WordZone, BinaryImage)>) -> Result<&Page> {
        let page_id = page.page_id.clone();
        let book_id = page.book_id.clone();
        self.add_book(&book_id, &book_id);
        self.books.get_mut(&book_id).expect("book exists").page_ids.push(page_id.clone());
        self.pages.insert(page_id.clone(), page);
        self.insert_zones(&page_id, &book_id, zones)?;
        if let Some(root) = &self.root {
            store::write_page(root, self, &page_id)?;
            store::write_manifest(root, self)?;
        }
        Ok(&self.pages[&page_id])
    }

    fn insert_zones(&mut self, page_id: &str, book_id: &str, zones: Vec<(WordZone, BinaryImage)>) -> Result<()> {
        let images = Arc::make_mut(&mut self.zone_images);
        let mut fresh = Vec::new();
        for (zone, image) in zones {
            if self.zones.contains_key(&zone.zone_id) {
                continue;
            }
            self.pages.get_mut(page_id).expect("page exists").zone_ids.push(zone.zone_id.clone());
            images.insert(zone.zone_id.clone(), image);
            fresh.push(zone.zone_id.clone());
            self.zones.insert(
                zone.zone_id.clone(),
                ZoneRecord {
                    zone,
                    page_id: page_id.to_string(),
                    book_id: book_id.to_string(),
                },
            );
        }
        if let Some(cb) = &self.codebook {
            let features = Arc::make_mut(&mut self.features);
            for id in fresh {
                let fv = quantize(&id, &self.zone_images[&id], cb, &self.config.features)?;
                features.insert(id, fv);
            }
            self.pool = pool_of(&self.features)?;
        }
        Ok(())
    }

    /// Builds the codebook (once) and quantizes every zone.
    pub fn prepare(&mut self) -> Result<()> {
        if self.codebook.is_none() {
            let zones: Vec<&BinaryImage> = self.zones.keys().map(|id| &self.zone_images[id]).collect();
            let cb = build_codebook(
                &zones,
                &self.config.features,
                self.config.codebook_k,
                self.config.codebook_seed,
                self.config.max_codebook_descriptors,
            )?;
            self.codebook = Some(cb);
        }
        self.set_codebook_features()?;
        if let Some(root) = &self.root {
            store::write_features(root, self)?;
        }
        Ok(())
    }

    /// Installs an externally built codebook; cached features are rebuilt.
    pub fn set_codebook(&mut self, codebook: Codebook) -> Result<()> {
        if codebook.config_hash != self.config.features.hash() {
            return Err(Error::Config("codebook does not match the feature configuration".into()));
        }
        self.codebook = Some(codebook);
        self.features = Arc::new(BTreeMap::new());
        self.prepare()
    }

    fn set_codebook_features(&mut self) -> Result<()> {
        let cb = self.codebook.as_ref().expect("codebook built");
        let features = Arc::make_mut(&mut self.features);
        for (id, img) in self.zone_images.iter() {
            if !features.contains_key(id) {
                features.insert(id.clone(), quantize(id, img, cb, &self.config.features)?);
            }
        }
        self.pool = pool_of(&self.features)?;
        Ok(())
    }

    pub fn codebook(&self) -> Option<&Codebook> {
        self.codebook.as_ref()
    }

    pub fn books(&self) -> impl Iterator<Item = &Book> {
        self.books.values()
    }

    pub fn page(&self, page_id: &str) -> Option<&Page> {
        self.pages.get(page_id)
    }

    pub fn pages(&self) -> impl Iterator<Item = &Page> {
        self.pages.values()
    }

    pub fn zone(&self, zone_id: &str) -> Option<&ZoneRecord> {
        self.zones.get(zone_id)
    }

    pub fn zones(&self) -> impl Iterator<Item = &ZoneRecord> {
        self.zones.values()
    }

    pub fn zone_image(&self, zone_id: &str) -> Option<&BinaryImage> {
        self.zone_images.get(zone_id)
    }

    /// Zone pixels for display: the original scan when available.
    pub fn zone_gray(&self, zone_id: &str) -> Option<GrayImage> {
        let z = self.zones.get(zone_id)?;
        let page = self.pages.get(&z.page_id)?;
        let r = z.zone.rect();
        Some(match &page.gray {
            Some(g) => g.crop(r.x, r.y, r.w, r.h),
            None => page.mask.crop(r.x, r.y, r.w, r.h).to_gray(),
        })
    }

    pub fn feature(&self, zone_id: &str) -> Option<&FeatureVector> {
        self.features.get(zone_id)
    }

    pub fn features(&self) -> &BTreeMap<String, FeatureVector> {
        &self.features
    }

    pub fn pool(&self) -> Option<&PoolStats> {
        self.pool.as_ref()
    }

    pub fn events(&self) -> &[LabelEvent] {
        &self.events
    }

    pub fn label_state(&self) -> &LabelState {
        &self.state
    }

    pub fn queue(&self) -> &RecomputeQueue {
        &self.queue
    }

    pub fn cycles(&self) -> &[CycleRecord] {
        &self.cycles
    }

    /// Receipt of an earlier batch.
    pub fn receipt(&self, batch_id: &str) -> Option<&SubmitReceipt> {
        self.batches.get(batch_id)
    }

    pub fn cycle_count(&self) -> u64 {
        self.cycle
    }

    pub fn class(&self, class_key: &str) -> Option<&ClassState> {
        self.classes.get(class_key)
    }

    pub fn class_states(&self) -> impl Iterator<Item = &ClassState> {
        self.classes.values()
    }

    /// All classes, sorted by `class_key`.
    pub fn classes(&self) -> Vec<ClassSummary> {
        self.classes
            .values()
            .map(|c| {
                let n = self.state.count(&c.class_key);
                ClassSummary {
                    class_key: c.class_key.clone(),
                    label: c.label.clone(),
                    n_labels: n,
                    regime: c.model.as_ref().map_or_else(|| crate::ballpark::select_ballpark(0), |m| m.regime),
                    model_version: c.model_version(),
                    eur: c.curves.as_ref().map(|k| k.eur),
                    pending: self.queue.get(&c.class_key).is_some(),
                }
            })
            .collect()
    }

    /// Current hit list; `NoModel` until the class has been trained.
    pub fn hitlist(&self, class_key: &str) -> Result<&HitList> {
        let c = self.classes.get(class_key).ok_or_else(|| not_found("class", class_key))?;
        c.hitlist.as_ref().ok_or_else(|| Error::NoModel(class_key.to_string()))
    }

    /// Human labels for `class_key` in `(now - 24h, now]`.
    pub fn label_velocity(&self, class_key: &str, now: Timestamp) -> f64 {
        self.events
            .iter()
            .rev()
            .take_while(|e| e.timestamp > now - DAY_MS)
            .filter(|e| e.class_key == class_key && e.action.is_label() && e.timestamp <= now)
            .count() as f64
    }

    pub fn prospect(&self, class_key: &str, now: Timestamp) -> Option<Prospect> {
        let c = self.classes.get(class_key)?;
        let curves = c.curves.as_ref()?;
        let near = near_boundary_count(curves, &c.residual_scores);
        Some(prospect_score(curves, near, self.label_velocity(class_key, now), self.config.velocity_cap))
    }

    /// Classes with curves, best prospect first; ties by `class_key`.
    pub fn prospects(&self, now: Timestamp, top: usize) -> Vec<Prospect> {
        let mut out: Vec<Prospect> = self.classes.keys().filter_map(|k| self.prospect(k, now)).collect();
        out.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.class_key.cmp(&b.class_key)));
        out.truncate(top);
        out
    }

    pub fn harvest(&self, book_id: Option<&str>, bucket_secs: u64) -> Result<HarvestCurve> {
        harvest_curve(&self.events, book_id, bucket_secs)
    }

    /// Validates and appends a batch of labels, then queues retraining of
    /// every affected class.
    pub fn submit_labels(&mut self, batch: LabelBatch, now: Timestamp) -> Result<SubmitReceipt> {
        if let Some(id) = &batch.batch_id {
            if let Some(r) = self.batches.get(id) {
                return Ok(SubmitReceipt {
                    duplicate: true,
                    ..r.clone()
                });
            }
        }
        let mut positive = BTreeSet::new();
        let mut negative = BTreeSet::new();
        for l in &batch.labels {
            if l.action == Action::Reject {
                negative.insert(l.zone_id.as_str());
            } else {
                positive.insert(l.zone_id.as_str());
            }
        }
        if let Some(z) = positive.intersection(&negative).next() {
            return Err(Error::ConflictingActions(z.to_string()));
        }

        let batch_id = match batch.batch_id {
            Some(id) if !id.is_empty() => id,
            _ => self.fresh_batch_id(),
        };
        let mut next_id = self.events.last().map_or(1, |e| e.event_id + 1);
        let mut accepted = Vec::new();
        let mut rejected = Vec::new();
        for (index, l) in batch.labels.iter().enumerate() {
            match self.validate(l) {
                Ok((class, book_id)) => {
                    accepted.push(LabelEvent {
                        event_id: next_id,
                        zone_id: l.zone_id.clone(),
                        class_key: class.class_key,
                        label: class.label,
                        action: l.action,
                        mode: l.mode.unwrap_or(if l.action == Action::New {
                            Mode::Widening
                        } else {
                            Mode::Deepening
                        }),
                        user: batch.user.clone(),
                        batch_id: batch_id.clone(),
                        timestamp: now,
                        book_id,
                    });
                    next_id += 1;
                }
                Err(reason) => rejected.push(RejectedLabel {
                    index,
                    zone_id: l.zone_id.clone(),
                    reason,
                }),
            }
        }
        if let Some(root) = &self.root {
            super::events::append_jsonl(&store::events_path(root), &accepted)?;
        }

        let mut affected: BTreeMap<String, (Reason, String)> = BTreeMap::new();
        for e in &accepted {
            self.apply_event(e);
            let reason = if e.action.is_label() {
                Reason::NewLabel
            } else {
                Reason::Rejection
            };
            affected
                .entry(e.class_key.clone())
                .and_modify(|(r, b)| {
                    *r = (*r).max(reason);
                    *b = e.book_id.clone();
                })
                .or_insert((reason, e.book_id.clone()));
        }
        let requests = affected
            .into_iter()
            .map(|(class, (reason, book))| {
                self.queue
                    .enqueue(&class, reason, &book, now, self.config.debounce_ms)
                    .clone()
            })
            .collect();
        let receipt = SubmitReceipt {
            batch_id: batch_id.clone(),
            accepted: accepted.iter().map(|e| e.event_id).collect(),
            rejected,
            requests,
            duplicate: false,
        };
        if !batch.labels.is_empty() {
            self.batches.insert(batch_id, receipt.clone());
        }
        Ok(receipt)
    }

    fn fresh_batch_id(&self) -> String {
        let mut n = self.batches.len() + 1;
        loop {
            let id = format!("batch-{n:08}");
            if !self.batches.contains_key(&id) {
                return id;
            }
            n += 1;
        }
    }

    fn validate(&self, l: &LabelInput) -> std::result::Result<(ClassId, String), String> {
        let zone = self.zones.get(&l.zone_id).ok_or_else(|| "unknown zone".to_string())?;
        let class = ClassId::new(&l.label).map_err(|e| e.to_string())?;
        if l.action != Action::New {
            let c = self
                .classes
                .get(&class.class_key)
                .ok_or_else(|| format!("unknown class {}", class.class_key))?;
            if !c.shown.contains(&l.zone_id) {
                return Err(format!("zone is not in the hit list of {}", class.class_key));
            }
        }
        Ok((class, zone.book_id.clone()))
    }

    pub(crate) fn apply_event(&mut self, e: &LabelEvent) {
        self.state.apply(e);
        self.classes
            .entry(e.class_key.clone())
            .or_insert_with(|| ClassState::new(&e.class_key, &e.label));
        let receipt = self.batches.entry(e.batch_id.clone()).or_insert_with(|| SubmitReceipt {
            batch_id: e.batch_id.clone(),
            accepted: Vec::new(),
            rejected: Vec::new(),
            requests: Vec::new(),
            duplicate: false,
        });
        receipt.accepted.push(e.event_id);
        receipt.accepted.dedup();
        self.events.push(e.clone());
    }

    /// Chooses the ready requests for this cycle: hot books first, then by
    /// prospect score, then by class key. Cold books wait for every
    /// `cold_every`-th cycle.
    pub fn plan_cycle(&mut self, now: Timestamp) -> CyclePlan {
        let start = Instant::now();
        self.cycle += 1;
        let cold_turn = self.config.cold_every <= 1 || self.cycle % self.config.cold_every == 0;
        let heat = book_heat(
            &self.events,
            self.books.keys().map(String::as_str),
            now,
            self.config.hot_window_ms,
            self.config.hot_threshold,
        );
        let mut ready: Vec<(bool, f64, RecomputeRequest)> = Vec::new();
        let mut skipped_cold = Vec::new();
        for r in self.queue.ready(now) {
            let hot = heat.get(&r.book_id).is_some_and(|h| h.status == HeatStatus::Hot);
            if !hot && !cold_turn {
                skipped_cold.push(r.class_key.clone());
                continue;
            }
            let p = self.prospect(&r.class_key, now).map_or(0.0, |p| p.score);
            ready.push((hot, p, r.clone()));
        }
        ready.sort_by(|a, b| {
            b.0.cmp(&a.0)
                .then_with(|| b.1.total_cmp(&a.1))
                .then_with(|| a.2.class_key.cmp(&b.2.class_key))
        });
        let requests: Vec<RecomputeRequest> = ready.into_iter().map(|r| r.2).collect();
        let mut plan = self.plan_for(now, requests.into_iter().map(|r| (r.class_key.clone(), Some(r))).collect());
        plan.skipped_cold = skipped_cold;
        plan.plan_ms = start.elapsed().as_secs_f64() * 1e3;
        plan
    }

    fn plan_for(&self, now: Timestamp, classes: Vec<(String, Option<RecomputeRequest>)>) -> CyclePlan {
        let snapshot = match (&self.codebook, &self.pool) {
            (Some(cb), Some(pool)) if !classes.is_empty() => Some(Arc::new(Snapshot {
                config: self.config.clone(),
                features: Arc::clone(&self.features),
                zone_images: Arc::clone(&self.zone_images),
                codebook: cb.clone(),
                pool: pool.clone(),
                labels: self.state.positives.clone(),
            })),
            _ => None,
        };
        let jobs = classes
            .into_iter()
            .map(|(class_key, request)| self.job_for(class_key, request))
            .collect();
        CyclePlan {
            cycle: self.cycle,
            now,
            watermark: self.state.watermark,
            skipped_cold: Vec::new(),
            jobs,
            snapshot,
            plan_ms: 0.0,
        }
    }

    fn job_for(&self, class_key: String, request: Option<RecomputeRequest>) -> Job {
        let class = self.classes.get(&class_key);
        let label = class.map_or_else(|| class_key.clone(), |c| c.label.clone());
        let id = ClassId {
            label: label.clone(),
            class_key: class_key.clone(),
        };
        let mut positives = Vec::new();
        let mut negatives = Vec::new();
        for (zone, p) in &self.state.positives {
            let Some(fv) = self.features.get(zone) else { continue };
            if p.class_key == class_key {
                positives.push(Sample::new(fv.clone(), id.clone(), p.provenance));
            } else {
                negatives.push(fv.clone());
            }
        }
        Job {
            request,
            label,
            positives,
            negatives,
            rejected: self.state.rejections.get(&class_key).cloned().unwrap_or_default(),
            previous_version: class.map_or(0, |c| c.model_version()),
            class_key,
        }
    }

    /// Installs the results of an executed plan. A request is retired only
    /// if no label arrived for its class while the plan ran.
    pub fn commit(&mut self, outcome: CycleOutcome) -> Result<CycleReport> {
        let start = Instant::now();
        let mut report = CycleReport {
            cycle: outcome.cycle,
            skipped_cold: outcome.skipped_cold,
            ..CycleReport::default()
        };
        let mut retrained = Vec::new();
        for r in outcome.results {
            report.durations.per_class_ms.push((r.class_key.clone(), r.ms));
            let class = self
                .classes
                .entry(r.class_key.clone())
                .or_insert_with(|| ClassState::new(&r.class_key, &r.label));
            match r.outcome {
                Ok(t) => {
                    let version = t.model.version;
                    if let Some(h) = &t.hitlist {
                        class.shown.extend(h.entries.iter().map(|e| e.zone_id.clone()));
                        report.hitlists_regenerated += 1;
                    }
                    class.model = Some(t.model);
                    class.hitlist = t.hitlist;
                    class.curves = t.curves;
                    class.residual_scores = t.residual_scores;
                    class.last_error = None;
                    if let Some(req) = &r.request {
                        self.queue.complete(req);
                    }
                    retrained.push(RetrainedClass {
                        class_key: r.class_key.clone(),
                        version,
                    });
                    if let Some(root) = &self.root {
                        store::write_class(root, class)?;
                    }
                }
                Err(e) => {
                    log::warn!("retraining {} failed: {e}", r.class_key);
                    class.last_error = Some(e.clone());
                    if r.request.is_some() {
                        self.queue.retry(&r.class_key, outcome.now, self.config.retry_backoff_ms);
                    }
                    report.failures.push(CycleFailure {
                        class_key: r.class_key,
                        error: e,
                    });
                }
            }
        }
        if !retrained.is_empty() {
            let record = CycleRecord {
                cycle: outcome.cycle,
                now: outcome.now,
                watermark: outcome.watermark,
                retrained: retrained.clone(),
            };
            if let Some(root) = &self.root {
                super::events::append_jsonl(&store::cycles_path(root), std::slice::from_ref(&record))?;
                store::write_model_index(root, self)?;
            }
            self.cycles.push(record);
        }
        report.classes_retrained = retrained;
        report.durations.plan_ms = outcome.plan_ms;
        report.durations.execute_ms = outcome.execute_ms;
        report.durations.commit_ms = start.elapsed().as_secs_f64() * 1e3;
        Ok(report)
    }

    /// Plan, execute and commit in one call.
    pub fn run_cycle(&mut self, now: Timestamp) -> Result<CycleReport> {
        let plan = self.plan_cycle(now);
        self.commit(plan.execute())
    }

    /// Retrains the given classes immediately, outside the queue.
    pub fn retrain(&mut self, class_keys: &[&str], now: Timestamp) -> Result<CycleReport> {
        self.cycle += 1;
        let classes = class_keys
            .iter()
            .map(|k| (k.to_string(), self.queue.get(k).cloned()))
            .collect();
        let plan = self.plan_for(now, classes);
        self.commit(plan.execute())
    }

    /// Rebuilds label state and models from an event log and cycle journal
    /// on top of this engine's pages and features.
    pub fn replay(&self, events: &[LabelEvent], cycles: &[CycleRecord]) -> Result<Engine> {
        let mut e = Engine {
            events: Vec::new(),
            state: LabelState::default(),
            classes: BTreeMap::new(),
            queue: RecomputeQueue::default(),
            batches: BTreeMap::new(),
            cycle: 0,
            cycles: Vec::new(),
            root: None,
            ..self.clone()
        };
        let mut pending = events.iter().peekable();
        for c in cycles {
            while let Some(ev) = pending.next_if(|ev| ev.event_id <= c.watermark) {
                e.apply_event(ev);
            }
            e.cycle = c.cycle;
            let classes = c.retrained.iter().map(|r| (r.class_key.clone(), None)).collect();
            let plan = e.plan_for(c.now, classes);
            e.commit(plan.execute())?;
        }
        for ev in pending {
            e.apply_event(ev);
        }
        e.rebuild_queue();
        Ok(e)
    }

    /// Pending work after a restart: every class with events past the last
    /// committed watermark.
    pub(crate) fn rebuild_queue(&mut self) {
        let watermark = self.cycles.last().map_or(0, |c| c.watermark);
        let debounce = self.config.debounce_ms;
        for e in self.events.iter().filter(|e| e.event_id > watermark) {
            let reason = if e.action.is_label() {
                Reason::NewLabel
            } else {
                Reason::Rejection
            };
            self.queue.enqueue(&e.class_key, reason, &e.book_id, e.timestamp, debounce);
        }
    }

    /// Canonical JSON of label state and class models, for comparing
    /// engines.
    pub fn state_fingerprint(&self) -> Result<String> {
        #[derive(Serialize)]
        struct View<'a> {
            state: &'a LabelState,
            classes: &'a BTreeMap<String, ClassState>,
        }
        Ok(serde_json::to_string(&View {
            state: &self.state,
            classes: &self.classes,
        })?)
    }
}

/// Zone pixels used for features: projection zones come from their band
/// strip (seams applied), external zones straight from the mask.
pub(crate) fn cut_zone(page: &Page, z: &WordZone) -> BinaryImage {
    match (z.source, page.bands.get(z.line)) {
        (ZoneSource::Projection, Some(band)) if z.y >= band.top => {
            band_strip(band, &page.mask).crop(z.x, z.y - band.top, z.w, z.h)
        }
        _ => page.mask.crop(z.x, z.y, z.w, z.h),
    }
}

fn pool_of(features: &BTreeMap<String, FeatureVector>) -> Result<Option<PoolStats>> {
    if features.is_empty() {
        return Ok(None);
    }
    PoolStats::from_vectors(features.values().map(|f| f.histogram.as_slice())).map(Some)
}

fn not_found(kind: &'static str, id: &str) -> Error {
    Error::NotFound {
        kind,
        id: id.to_string(),
    }
}
