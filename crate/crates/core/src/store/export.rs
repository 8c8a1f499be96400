use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::{index_entries, zones_on_line, IndexStatus};
use crate::error::{Error, Result};
use crate::harvest::{Engine, Page};
use crate::segmentation::Rect;

pub const ELLIPSIS: &str = "...";

/// Zones whose overlap with an already selected zone exceeds this are
/// suppressed.
const SUPPRESS_IOU: f64 = 0.3;

/// Restricts an export to part of the collection.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct WordlistFilter {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub book_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub classes: Option<BTreeSet<String>>,
}

impl WordlistFilter {
    fn admits(&self, e: &Engine, class_key: &str, zone_id: &str) -> bool {
        let class_ok = self.classes.as_ref().is_none_or(|c| c.contains(class_key));
        let book_ok = self
            .book_id
            .as_ref()
            .is_none_or(|b| e.zone(zone_id).is_some_and(|z| &z.book_id == b));
        class_ok && book_ok
    }
}

/// Alphabetic word list as TSV, one row per class sorted by label code
/// points.
pub fn export_wordlist(e: &Engine, filter: &WordlistFilter) -> String {
    #[derive(Default)]
    struct Row {
        confirmed: Vec<String>,
        hypotheses: usize,
    }
    let mut rows: BTreeMap<(String, String), Row> = BTreeMap::new();
    for entry in index_entries(e) {
        if !filter.admits(e, &entry.class_key, &entry.zone_id) {
            continue;
        }
        let label = e
            .label_state()
            .class_labels
            .get(&entry.class_key)
            .cloned()
            .unwrap_or_else(|| entry.class_key.clone());
        let row = rows.entry((label, entry.class_key)).or_default();
        match entry.status {
            IndexStatus::Confirmed => row.confirmed.push(entry.zone_id),
            IndexStatus::Hypothesis => row.hypotheses += 1,
        }
    }
    let mut out = String::from("label\tconfirmed_count\thypothesis_count\tzone_ids\n");
    for ((label, _), row) in rows {
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\n",
            tsv_field(&label),
            row.confirmed.len(),
            row.hypotheses,
            row.confirmed.join(",")
        ));
    }
    out
}

fn tsv_field(s: &str) -> String {
    s.replace(['\t', '\n', '\r'], " ")
}

/// A zone competing for a place in the transcription of its line.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub zone_id: String,
    pub rect: Rect,
    /// Label to render, or the ellipsis.
    pub text: String,
    pub confirmed: bool,
    /// Score above the class's floor; infinite for confirmed labels.
    pub margin: f64,
    /// Two or more classes claim the zone above their floors.
    pub conflicting: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LineTranscription {
    pub line: usize,
    pub text: String,
    /// Selected zones, left to right.
    pub words: Vec<Candidate>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Transcription {
    pub page_id: String,
    pub floor_offset: f64,
    pub watermark: u64,
    pub lines: Vec<LineTranscription>,
}

impl Transcription {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for l in &self.lines {
            s.push_str(&l.text);
            s.push('\n');
        }
        s
    }
}

/// Per-zone hypotheses of every class: `(class_key, score)`.
fn hypotheses_by_zone(e: &Engine) -> BTreeMap<&str, Vec<(&str, f64)>> {
    let mut by_zone: BTreeMap<&str, Vec<(&str, f64)>> = BTreeMap::new();
    for c in e.class_states() {
        let Some(h) = &c.hitlist else { continue };
        for entry in h.entries.iter().filter(|x| !x.already_labeled) {
            by_zone.entry(&entry.zone_id).or_default().push((&c.class_key, entry.score));
        }
    }
    by_zone
}

/// Candidates of one line. A hypothesis is trusted when its score reaches
/// the class's EUR threshold plus `floor_offset`; classes without curves
/// have no floor and are never trusted.
pub fn transcription_candidates(e: &Engine, page: &Page, line: usize, floor_offset: f64) -> Vec<Candidate> {
    candidates_with(e, page, line, floor_offset, &hypotheses_by_zone(e))
}

fn candidates_with(
    e: &Engine,
    page: &Page,
    line: usize,
    floor_offset: f64,
    hyps: &BTreeMap<&str, Vec<(&str, f64)>>,
) -> Vec<Candidate> {
    let state = e.label_state();
    let label_of = |class: &str| state.class_labels.get(class).cloned().unwrap_or_else(|| class.to_string());
    let mut out = Vec::new();
    for z in zones_on_line(e, page, line) {
        let id = z.zone.zone_id.as_str();
        if let Some(p) = state.positives.get(id) {
            out.push(Candidate {
                zone_id: id.to_string(),
                rect: z.zone.rect(),
                text: label_of(&p.class_key),
                confirmed: true,
                margin: f64::INFINITY,
                conflicting: false,
            });
            continue;
        }
        let Some(list) = hyps.get(id) else { continue };
        let mut best: Option<(&str, f64)> = None;
        let mut above = 0;
        for &(class, score) in list {
            if state.is_rejected(class, id) {
                continue;
            }
            let margin = e
                .class(class)
                .and_then(|c| c.curves.as_ref())
                .map_or(f64::NEG_INFINITY, |k| score - (k.eur_threshold + floor_offset));
            if margin >= 0.0 {
                above += 1;
            }
            if best.is_none_or(|(bc, bm)| margin > bm || (margin == bm && class < bc)) {
                best = Some((class, margin));
            }
        }
        let Some((class, margin)) = best else { continue };
        let conflicting = above > 1;
        out.push(Candidate {
            zone_id: id.to_string(),
            rect: z.zone.rect(),
            text: if margin >= 0.0 && !conflicting {
                label_of(class)
            } else {
                ELLIPSIS.to_string()
            },
            confirmed: false,
            margin,
            conflicting,
        });
    }
    out
}

/// Greedy selection: confirmed zones first, then by margin; a zone is
/// dropped when it overlaps a selected one. Returns the selection in
/// x order.
fn select(mut candidates: Vec<Candidate>) -> Vec<Candidate> {
    candidates.sort_by(|a, b| {
        b.confirmed
            .cmp(&a.confirmed)
            .then_with(|| b.margin.total_cmp(&a.margin))
            .then_with(|| a.zone_id.cmp(&b.zone_id))
    });
    let mut selected: Vec<Candidate> = Vec::new();
    for c in candidates {
        if c.confirmed || selected.iter().all(|s| s.rect.iou(&c.rect) <= SUPPRESS_IOU) {
            selected.push(c);
        }
    }
    selected.sort_by(|a, b| a.rect.x.cmp(&b.rect.x).then_with(|| a.zone_id.cmp(&b.zone_id)));
    selected
}

fn render(words: &[Candidate]) -> String {
    let mut parts: Vec<&str> = Vec::new();
    for w in words {
        if w.text == ELLIPSIS && parts.last() == Some(&ELLIPSIS) {
            continue;
        }
        parts.push(&w.text);
    }
    if parts.is_empty() {
        ELLIPSIS.to_string()
    } else {
        parts.join(" ")
    }
}

/// Provisional page text: trusted words in place, ellipses for the rest.
pub fn export_transcription(e: &Engine, page_id: &str, floor_offset: f64) -> Result<Transcription> {
    let page = e.page(page_id).ok_or_else(|| Error::NotFound {
        kind: "page",
        id: page_id.to_string(),
    })?;
    let hyps = hypotheses_by_zone(e);
    let lines = (0..page.bands.len())
        .map(|line| {
            let words = select(candidates_with(e, page, line, floor_offset, &hyps));
            LineTranscription {
                line,
                text: render(&words),
                words,
            }
        })
        .collect();
    Ok(Transcription {
        page_id: page_id.to_string(),
        floor_offset,
        watermark: e.label_state().watermark,
        lines,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harvest::{Action, EngineConfig, LabelBatch, LabelInput};
    use crate::imaging::{BinaryImage, GrayImage};

    fn cand(id: &str, x: usize, w: usize, text: &str, confirmed: bool, margin: f64) -> Candidate {
        Candidate {
            zone_id: id.into(),
            rect: Rect::new(x, 0, w, 10),
            text: text.into(),
            confirmed,
            margin,
            conflicting: false,
        }
    }

    #[test]
    fn confirmed_words_render_in_x_order() {
        let words = select(vec![
            cand("c", 40, 10, "gamma", true, f64::INFINITY),
            cand("a", 0, 10, "alpha", true, f64::INFINITY),
            cand("b", 20, 10, "beta", true, f64::INFINITY),
        ]);
        assert_eq!(render(&words), "alpha beta gamma");
    }

    #[test]
    fn all_below_floor_is_one_ellipsis() {
        let words = select(vec![
            cand("a", 0, 10, ELLIPSIS, false, -1.0),
            cand("b", 20, 10, ELLIPSIS, false, -2.0),
        ]);
        assert_eq!(words.len(), 2);
        assert_eq!(render(&words), ELLIPSIS);
        assert_eq!(render(&[]), ELLIPSIS);
    }

    #[test]
    fn overlapping_hypothesis_loses_to_confirmed() {
        let words = select(vec![
            cand("h", 0, 12, "wrong", false, 5.0),
            cand("c", 2, 10, "right", true, f64::INFINITY),
            cand("t", 30, 10, "tail", false, 0.5),
        ]);
        assert_eq!(render(&words), "right tail");
    }

    /// Independent selection oracle: try every subset, keep the feasible
    /// one that is lexicographically best under the greedy priority.
    fn oracle(c: &[Candidate]) -> Vec<String> {
        let n = c.len();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| {
            c[b].confirmed
                .cmp(&c[a].confirmed)
                .then(c[b].margin.total_cmp(&c[a].margin))
                .then(c[a].zone_id.cmp(&c[b].zone_id))
        });
        let mut best: Option<Vec<bool>> = None;
        for mask in 0u32..(1 << n) {
            let pick: Vec<bool> = order.iter().map(|&i| mask >> i & 1 == 1).collect();
            let chosen: Vec<usize> = order.iter().copied().filter(|&i| mask >> i & 1 == 1).collect();
            let feasible = chosen.iter().enumerate().all(|(k, &i)| {
                c[i].confirmed || chosen[..k].iter().all(|&j| c[j].rect.iou(&c[i].rect) <= SUPPRESS_IOU)
            }) && (0..n).all(|i| !c[i].confirmed || mask >> i & 1 == 1);
            if feasible && best.as_ref().is_none_or(|b| pick > *b) {
                best = Some(pick);
            }
        }
        let pick = best.unwrap();
        let mut ids: Vec<&Candidate> = order.iter().zip(pick).filter(|(_, p)| *p).map(|(&i, _)| &c[i]).collect();
        ids.sort_by(|a, b| a.rect.x.cmp(&b.rect.x).then(a.zone_id.cmp(&b.zone_id)));
        ids.iter().map(|x| x.zone_id.clone()).collect()
    }

    #[test]
    fn greedy_matches_subset_oracle_on_reference_page() {
        // a page with one line of touching words, over-segmented
        let mut e = crate::harvest::Engine::new(EngineConfig {
            codebook_k: 8,
            debounce_ms: 0,
            cold_every: 1,
            hitlist_limit: 30,
            ..EngineConfig::synthetic()
        });
        let glyphs = crate::imaging::GlyphSet::builtin();
        let spec = crate::corpus::CorpusSpec::default();
        let words = ["ab", "cab", "bad", "ab", "cab", "bad", "dab"];
        let imgs: Vec<BinaryImage> = words
            .iter()
            .enumerate()
            .map(|(i, w)| crate::corpus::render_instance(&spec, &glyphs, w, &crate::corpus::Style::plain(), i as u64).unwrap())
            .collect();
        let page = crate::corpus::synth_page(&[imgs], &[words.iter().map(|w| w.to_string()).collect()], 10, 12, 20);
        let gray = GrayImage::from_fn(page.image.width(), page.image.height(), |x, y| if page.image.get(x, y) { 0 } else { 255 });
        e.ingest_page("b", "p", gray).unwrap();
        e.prepare().unwrap();
        let ids = e.page("p").unwrap().zone_ids.clone();
        let truth = &page.words[0];
        let best_zone = |r: &Rect| ids.iter().max_by(|a, b| {
            let ra = e.zone(a).unwrap().zone.rect().iou(r);
            let rb = e.zone(b).unwrap().zone.rect().iou(r);
            ra.total_cmp(&rb)
        }).unwrap().clone();
        let labels = [0, 1, 2]
            .iter()
            .map(|&i| LabelInput {
                zone_id: best_zone(&truth[i].1),
                label: truth[i].0.clone(),
                action: Action::New,
                mode: None,
            })
            .chain(std::iter::once(LabelInput {
                zone_id: best_zone(&truth[3].1),
                label: "ab".into(),
                action: Action::New,
                mode: None,
            }))
            .collect();
        e.submit_labels(LabelBatch { batch_id: None, user: "u".into(), labels }, 0).unwrap();
        e.run_cycle(0).unwrap();

        let mut candidates = transcription_candidates(&e, e.page("p").unwrap(), 0, 0.0);
        assert!(candidates.len() > 4, "{}", candidates.len());
        // keep the exhaustive oracle tractable
        candidates.sort_by_key(|c| c.rect.x);
        candidates.truncate(14);
        let got: Vec<String> = select(candidates.clone()).into_iter().map(|c| c.zone_id).collect();
        assert_eq!(got, oracle(&candidates));
        let t = export_transcription(&e, "p", 0.0).unwrap();
        assert_eq!(t.lines.len(), 1);
        assert!(t.lines[0].text.contains("ab cab bad"), "{}", t.lines[0].text);
    }

    #[test]
    fn wordlist_sorted_by_code_point() {
        let mut e = crate::harvest::Engine::new(EngineConfig::synthetic());
        let mut zones = Vec::new();
        for i in 0..3 {
            zones.push(e.add_word_page("b", &format!("p{i}"), BinaryImage::from_fn(6, 6, |x, _| x > 1)).unwrap());
        }
        assert_eq!(export_wordlist(&e, &WordlistFilter::default()), "label\tconfirmed_count\thypothesis_count\tzone_ids\n");
        let labels = [("b", 0), ("a", 1), ("a", 2)]
            .iter()
            .map(|(l, i)| LabelInput {
                zone_id: zones[*i].clone(),
                label: l.to_string(),
                action: Action::New,
                mode: None,
            })
            .collect();
        e.submit_labels(LabelBatch { batch_id: None, user: "u".into(), labels }, 0).unwrap();
        let out = export_wordlist(&e, &WordlistFilter::default());
        let rows: Vec<&str> = out.lines().skip(1).collect();
        assert_eq!(rows[0], format!("a\t2\t0\t{},{}", zones[1], zones[2]));
        assert_eq!(rows[1], format!("b\t1\t0\t{}", zones[0]));
        assert_eq!(out, export_wordlist(&e, &WordlistFilter::default()));
        let only_b = WordlistFilter {
            classes: Some(["b".to_string()].into()),
            ..WordlistFilter::default()
        };
        assert_eq!(export_wordlist(&e, &only_b).lines().count(), 2);
    }
}
