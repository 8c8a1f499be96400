//! On-disk collections and exports.
//!
//! A collection is one directory:
//!
//! ```text
//! manifest.json        version, books, engine configuration, codebook hash
//! codebook.json
//! pages/<hex>.json     page metadata and line bands
//! pages/<hex>.pgm      original scan, or the mask for pre-cut word images
//! zones/<hex>.json     zones of one page
//! features/<hex>.json  feature vectors of one page, keyed by codebook hash
//! models/<hex>.json    class state: model, hit list, curves
//! models/index.json    raw index of confirmed labels and hypotheses
//! events.jsonl         label events, append-only
//! cycles.jsonl         committed retraining cycles
//! exports/             export files and tokens.json
//! ```
//!
//! `<hex>` is the hex-encoded page id or class key.

mod export;
mod pagexml;
mod tokens;

pub use export::{
    export_transcription, export_wordlist, transcription_candidates, Candidate, LineTranscription, Transcription,
    WordlistFilter, ELLIPSIS,
};
pub use pagexml::export_pagexml;
pub use tokens::{DownloadToken, ExportKind, ExportRecord, Exports};

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{Codebook, FeatureVector};
use crate::harvest::{read_jsonl, ClassState, CycleRecord, Engine, EngineConfig, LabelEvent, Page, TornRecord, ZoneRecord};
use crate::imaging::io::{decode_pgm, encode_mask_pgm, encode_pgm};
use crate::imaging::binarize;
use crate::segmentation::{LineBand, WordZone};

pub const STORE_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub collection_id: String,
    pub name: String,
    pub books: Vec<crate::harvest::Book>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub codebook_hash: Option<String>,
    pub config: EngineConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct PageRecord {
    version: u32,
    page_id: String,
    book_id: String,
    image_filename: String,
    width: usize,
    height: usize,
    /// The stored image is a grayscale scan, not a mask.
    gray: bool,
    bands: Vec<LineBand>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct FeatureFile {
    codebook_hash: String,
    vectors: Vec<FeatureVector>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IndexStatus {
    Hypothesis,
    Confirmed,
}

/// One row of the raw index.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IndexEntry {
    pub class_key: String,
    pub zone_id: String,
    pub status: IndexStatus,
    /// `log p(x | C)` under the model; absent while the class is untrained.
    pub score: Option<f64>,
    pub model_version: u64,
}

/// Problems tolerated while loading.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LoadReport {
    pub torn_events: Option<TornRecord>,
    pub torn_cycles: Option<TornRecord>,
    /// Pages whose cached features were stale and got recomputed.
    pub requantized_pages: usize,
}

fn hex_name(id: &str, ext: &str) -> String {
    format!("{}.{ext}", hex::encode(id.as_bytes()))
}

pub fn manifest_path(root: &Path) -> PathBuf {
    root.join("manifest.json")
}

pub fn events_path(root: &Path) -> PathBuf {
    root.join("events.jsonl")
}

pub fn cycles_path(root: &Path) -> PathBuf {
    root.join("cycles.jsonl")
}

pub fn exports_dir(root: &Path) -> PathBuf {
    root.join("exports")
}

/// Writes via a temporary file and rename, so readers never see half a
/// file.
pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    write_atomic(path, s.as_bytes())
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    Ok(serde_json::from_slice(&fs::read(path)?)?)
}

fn check_version(what: &str, found: u32) -> Result<()> {
    if found != STORE_VERSION {
        return Err(Error::Migration {
            what: what.to_string(),
            found,
            supported: STORE_VERSION,
        });
    }
    Ok(())
}

pub(crate) fn write_manifest(root: &Path, e: &Engine) -> Result<()> {
    let name = root.file_name().map_or_else(String::new, |n| n.to_string_lossy().into_owned());
    write_json(
        &manifest_path(root),
        &Manifest {
            version: STORE_VERSION,
            collection_id: name.clone(),
            name,
            books: e.books().cloned().collect(),
            codebook_hash: e.codebook().map(Codebook::hash),
            config: e.config().clone(),
        },
    )
}

pub(crate) fn write_page(root: &Path, e: &Engine, page_id: &str) -> Result<()> {
    let p = e.page(page_id).ok_or_else(|| Error::NotFound {
        kind: "page",
        id: page_id.to_string(),
    })?;
    let record = PageRecord {
        version: STORE_VERSION,
        page_id: p.page_id.clone(),
        book_id: p.book_id.clone(),
        image_filename: p.image_filename.clone(),
        width: p.mask.width(),
        height: p.mask.height(),
        gray: p.gray.is_some(),
        bands: p.bands.clone(),
    };
    let image = match &p.gray {
        Some(g) => encode_pgm(g),
        None => encode_mask_pgm(&p.mask),
    };
    write_atomic(&root.join("pages").join(hex_name(page_id, "pgm")), &image)?;
    write_json(&root.join("pages").join(hex_name(page_id, "json")), &record)?;
    let zones: Vec<&WordZone> = p.zone_ids.iter().filter_map(|z| e.zone(z)).map(|z| &z.zone).collect();
    write_json(&root.join("zones").join(hex_name(page_id, "json")), &zones)?;
    if let Some(cb) = e.codebook() {
        write_page_features(root, e, p, &cb.hash())?;
    }
    Ok(())
}

fn write_page_features(root: &Path, e: &Engine, p: &Page, codebook_hash: &str) -> Result<()> {
    let vectors: Vec<FeatureVector> = p.zone_ids.iter().filter_map(|z| e.feature(z)).cloned().collect();
    write_json(
        &root.join("features").join(hex_name(&p.page_id, "json")),
        &FeatureFile {
            codebook_hash: codebook_hash.to_string(),
            vectors,
        },
    )
}

pub(crate) fn write_features(root: &Path, e: &Engine) -> Result<()> {
    let Some(cb) = e.codebook() else { return Ok(()) };
    write_atomic(&root.join("codebook.json"), cb.to_json()?.as_bytes())?;
    let hash = cb.hash();
    for p in e.pages() {
        write_page_features(root, e, p, &hash)?;
    }
    write_manifest(root, e)
}

pub(crate) fn write_class(root: &Path, c: &ClassState) -> Result<()> {
    write_json(&root.join("models").join(hex_name(&c.class_key, "json")), c)
}

pub(crate) fn write_model_index(root: &Path, e: &Engine) -> Result<()> {
    write_json(&root.join("models").join("index.json"), &index_entries(e))
}

fn create_layout(root: &Path) -> Result<()> {
    for d in ["pages", "zones", "features", "models", "exports"] {
        fs::create_dir_all(root.join(d))?;
    }
    Ok(())
}

/// Writes the whole engine under `root` and attaches it: later changes are
/// written through.
pub fn persist(e: &mut Engine, root: &Path) -> Result<()> {
    create_layout(root)?;
    e.root = None;
    write_manifest(root, e)?;
    for id in e.pages.keys() {
        write_page(root, e, id)?;
    }
    write_features(root, e)?;
    for c in e.class_states() {
        write_class(root, c)?;
    }
    write_model_index(root, e)?;
    let mut events = Vec::new();
    for ev in e.events() {
        serde_json::to_writer(&mut events, ev)?;
        events.push(b'\n');
    }
    write_atomic(&events_path(root), &events)?;
    let mut cycles = Vec::new();
    for c in e.cycles() {
        serde_json::to_writer(&mut cycles, c)?;
        cycles.push(b'\n');
    }
    write_atomic(&cycles_path(root), &cycles)?;
    e.root = Some(root.to_path_buf());
    Ok(())
}

/// Creates an empty collection directory.
pub fn create(root: &Path, config: EngineConfig) -> Result<Engine> {
    if manifest_path(root).exists() {
        return Err(Error::domain(format!("{} already holds a collection", root.display())));
    }
    let mut e = Engine::new(config);
    persist(&mut e, root)?;
    Ok(e)
}

/// Opens a collection. Label state comes from replaying the event log;
/// class models are read back from their files.
pub fn load(root: &Path) -> Result<(Engine, LoadReport)> {
    let manifest: Manifest = read_json(&manifest_path(root))?;
    check_version("manifest", manifest.version)?;
    let mut e = Engine::new(manifest.config.clone());
    let mut report = LoadReport::default();

    let codebook = match fs::read_to_string(root.join("codebook.json")) {
        Ok(s) => Some(Codebook::from_json(&s)?),
        Err(err) if err.kind() == std::io::ErrorKind::NotFound => None,
        Err(err) => return Err(err.into()),
    };
    let hash = codebook.as_ref().map(Codebook::hash);
    let mut features = BTreeMap::new();
    for book in &manifest.books {
        e.add_book(&book.book_id, &book.title);
        for page_id in &book.page_ids {
            let record: PageRecord = read_json(&root.join("pages").join(hex_name(page_id, "json")))?;
            check_version("page", record.version)?;
            let image = decode_pgm(&fs::read(root.join("pages").join(hex_name(page_id, "pgm")))?)?;
            let (gray, mask) = if record.gray {
                let mask = binarize(&image)?;
                (Some(image), mask)
            } else {
                (None, crate::imaging::BinaryImage::from_fn(image.width(), image.height(), |x, y| image.get(x, y) < 128))
            };
            let zones: Vec<WordZone> = read_json(&root.join("zones").join(hex_name(page_id, "json")))?;
            let page = Page {
                page_id: record.page_id,
                book_id: record.book_id.clone(),
                image_filename: record.image_filename,
                gray,
                mask,
                bands: record.bands,
                zone_ids: Vec::new(),
            };
            let cut: Vec<_> = zones.into_iter().map(|z| {
                let img = crate::harvest::engine::cut_zone(&page, &z);
                (z, img)
            }).collect();
            e.restore_page(page, cut)?;

            if let Some(h) = &hash {
                let path = root.join("features").join(hex_name(page_id, "json"));
                match read_json::<FeatureFile>(&path) {
                    Ok(f) if &f.codebook_hash == h => {
                        features.extend(f.vectors.into_iter().map(|v| (v.zone_id.clone(), v)));
                    }
                    _ => report.requantized_pages += 1,
                }
            }
        }
    }
    if let Some(cb) = codebook {
        e.restore_features(cb, features)?;
    }

    let (events, torn) = read_jsonl::<LabelEvent>(&events_path(root))?;
    report.torn_events = torn;
    let (cycles, torn) = read_jsonl::<CycleRecord>(&cycles_path(root))?;
    report.torn_cycles = torn;
    for ev in &events {
        e.apply_event(ev);
    }
    let mut classes = BTreeMap::new();
    for key in e.label_state().class_labels.keys() {
        let path = root.join("models").join(hex_name(key, "json"));
        if path.exists() {
            let c: ClassState = read_json(&path)?;
            classes.insert(key.clone(), c);
        }
    }
    for (k, c) in classes {
        e.classes.insert(k, c);
    }
    e.cycle = cycles.last().map_or(0, |c| c.cycle);
    e.cycles = cycles;
    e.rebuild_queue();
    if let Some(t) = &report.torn_events {
        log::warn!("dropped torn event record at line {} ({} bytes)", t.line, t.bytes);
    }
    e.root = Some(root.to_path_buf());
    Ok((e, report))
}

/// Confirmed labels and current hypotheses, sorted by class then zone.
pub fn index_entries(e: &Engine) -> Vec<IndexEntry> {
    let mut out = Vec::new();
    for c in e.class_states() {
        let version = c.model_version();
        let score = |zone: &str| {
            let m = c.model.as_ref()?;
            m.log_density(&e.feature(zone)?.histogram)
        };
        for (zone, _) in e.label_state().positives_of(&c.class_key) {
            out.push(IndexEntry {
                class_key: c.class_key.clone(),
                zone_id: zone.clone(),
                status: IndexStatus::Confirmed,
                score: score(zone),
                model_version: version,
            });
        }
        if let Some(h) = &c.hitlist {
            for entry in h.entries.iter().filter(|x| !x.already_labeled) {
                if e.label_state().positives.contains_key(&entry.zone_id) {
                    continue;
                }
                out.push(IndexEntry {
                    class_key: c.class_key.clone(),
                    zone_id: entry.zone_id.clone(),
                    status: IndexStatus::Hypothesis,
                    score: Some(entry.score),
                    model_version: h.model_version,
                });
            }
        }
    }
    out.sort_by(|a, b| a.class_key.cmp(&b.class_key).then_with(|| a.zone_id.cmp(&b.zone_id)));
    out
}

/// Zones of a page on one line, in the order they were cut.
pub(crate) fn zones_on_line<'a>(e: &'a Engine, page: &'a Page, line: usize) -> impl Iterator<Item = &'a ZoneRecord> {
    page.zone_ids.iter().filter_map(|z| e.zone(z)).filter(move |z| z.zone.line == line)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harvest::engine::tests::{small_engine, zone_of};
    use crate::harvest::{Action, LabelBatch, LabelInput};

    fn labeled_engine() -> (Engine, Vec<String>) {
        let mut e = small_engine();
        let mut words: Vec<String> = e.pages().map(|p| p.page_id.split('-').next().unwrap().to_string()).collect();
        words.sort();
        words.dedup();
        // 20 labels over 4 classes
        let labels: Vec<LabelInput> = words
            .iter()
            .flat_map(|w| (0..5).map(move |i| (w.clone(), i)))
            .map(|(w, i)| LabelInput {
                zone_id: zone_of(&e, &format!("{w}-{i:04}")),
                label: w,
                action: Action::New,
                mode: None,
            })
            .collect();
        e.submit_labels(
            LabelBatch {
                batch_id: None,
                user: "u".into(),
                labels,
            },
            0,
        )
        .unwrap();
        e.run_cycle(0).unwrap();
        (e, words)
    }

    #[test]
    fn empty_collection_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let e = create(dir.path(), EngineConfig::synthetic()).unwrap();
        let (l, report) = load(dir.path()).unwrap();
        assert_eq!(report, LoadReport::default());
        assert_eq!(l.state_fingerprint().unwrap(), e.state_fingerprint().unwrap());
        assert_eq!(l.zones().count(), 0);
        assert!(create(dir.path(), EngineConfig::synthetic()).is_err());
    }

    #[test]
    fn forty_zones_twenty_labels_round_trip() {
        let (mut e, _) = labeled_engine();
        assert_eq!(e.label_state().positives.len(), 20);
        let dir = tempfile::tempdir().unwrap();
        persist(&mut e, dir.path()).unwrap();
        let (l, report) = load(dir.path()).unwrap();
        assert_eq!(report.requantized_pages, 0);
        assert_eq!(l.zones().collect::<Vec<_>>(), e.zones().collect::<Vec<_>>());
        assert_eq!(l.features(), e.features());
        assert_eq!(l.label_state(), e.label_state());
        assert_eq!(l.state_fingerprint().unwrap(), e.state_fingerprint().unwrap());
        assert_eq!(index_entries(&l), index_entries(&e));
        assert_eq!(l.cycles(), e.cycles());
        assert!(l.queue().is_empty());
        for z in e.zones() {
            assert_eq!(l.zone_image(&z.zone.zone_id), e.zone_image(&z.zone.zone_id));
        }
    }

    #[test]
    fn writes_through_after_persist() {
        let (mut e, words) = labeled_engine();
        let dir = tempfile::tempdir().unwrap();
        persist(&mut e, dir.path()).unwrap();
        let z = zone_of(&e, &format!("{}-0007", words[0]));
        e.submit_labels(
            LabelBatch {
                batch_id: Some("late".into()),
                user: "u".into(),
                labels: vec![LabelInput {
                    zone_id: z,
                    label: words[0].clone(),
                    action: Action::New,
                    mode: None,
                }],
            },
            9,
        )
        .unwrap();
        let (l, _) = load(dir.path()).unwrap();
        assert_eq!(l.events().len(), 21);
        assert_eq!(l.queue().len(), 1);
        e.run_cycle(9).unwrap();
        let (l, _) = load(dir.path()).unwrap();
        assert!(l.queue().is_empty());
        assert_eq!(l.state_fingerprint().unwrap(), e.state_fingerprint().unwrap());
    }

    #[test]
    fn torn_event_tail_is_dropped_and_reported() {
        let (mut e, _) = labeled_engine();
        let dir = tempfile::tempdir().unwrap();
        persist(&mut e, dir.path()).unwrap();
        let mut f = fs::OpenOptions::new().append(true).open(events_path(dir.path())).unwrap();
        std::io::Write::write_all(&mut f, b"{\"event_id\":99,\"zone").unwrap();
        let (l, report) = load(dir.path()).unwrap();
        assert_eq!(report.torn_events.unwrap().line, 21);
        assert_eq!(l.events().len(), 20);
    }

    #[test]
    fn version_mismatch_names_versions() {
        let dir = tempfile::tempdir().unwrap();
        create(dir.path(), EngineConfig::synthetic()).unwrap();
        let path = manifest_path(dir.path());
        let s = fs::read_to_string(&path).unwrap().replace("\"version\": 1", "\"version\": 7");
        fs::write(&path, s).unwrap();
        let err = load(dir.path()).unwrap_err();
        assert_eq!(err.to_string(), "cannot migrate manifest from version 7 (supported: 1)");
    }

    #[test]
    fn confirmed_index_entries_are_justified_by_events() {
        let (e, _) = labeled_engine();
        let entries = index_entries(&e);
        assert!(entries.iter().any(|x| x.status == IndexStatus::Hypothesis));
        for x in entries.iter().filter(|x| x.status == IndexStatus::Confirmed) {
            let last = e.events().iter().rev().find(|ev| ev.zone_id == x.zone_id).unwrap();
            assert!(last.action.is_label());
            assert_eq!(last.class_key, x.class_key);
        }
        for x in entries.iter().filter(|x| x.status == IndexStatus::Hypothesis) {
            assert_eq!(x.model_version, e.class(&x.class_key).unwrap().model_version());
        }
    }
}
