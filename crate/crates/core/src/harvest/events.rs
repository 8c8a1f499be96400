use std::collections::{BTreeMap, BTreeSet};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::ballpark::Provenance;
use crate::error::Result;
use crate::Timestamp;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Action {
    New,
    Confirm,
    Reject,
}

impl Action {
    /// New and confirm events add a human label; rejects do not.
    pub fn is_label(self) -> bool {
        !matches!(self, Action::Reject)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Transcribing new words from a line strip.
    Widening,
    /// Reviewing a class's hit list.
    Deepening,
}

/// One human decision. Never edited; corrections are later events.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelEvent {
    pub event_id: u64,
    pub zone_id: String,
    pub class_key: String,
    /// Display label as typed (normalized); equal to `class_key` for
    /// lexical classes.
    pub label: String,
    pub action: Action,
    pub mode: Mode,
    pub user: String,
    pub batch_id: String,
    pub timestamp: Timestamp,
    /// Book of the zone at intake time.
    #[serde(default)]
    pub book_id: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PositiveLabel {
    pub class_key: String,
    pub provenance: Provenance,
    pub event_id: u64,
}

/// Labels materialized from the event log, last event wins.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelState {
    /// Current positive label per zone.
    pub positives: BTreeMap<String, PositiveLabel>,
    /// Zones rejected per class.
    pub rejections: BTreeMap<String, BTreeSet<String>>,
    /// Display label per class.
    pub class_labels: BTreeMap<String, String>,
    /// Last applied event id.
    pub watermark: u64,
}

impl LabelState {
    pub fn apply(&mut self, e: &LabelEvent) {
        self.class_labels.entry(e.class_key.clone()).or_insert_with(|| e.label.clone());
        match e.action {
            Action::New | Action::Confirm => {
                let provenance = if e.action == Action::New {
                    Provenance::New
                } else {
                    Provenance::Confirmed
                };
                self.positives.insert(
                    e.zone_id.clone(),
                    PositiveLabel {
                        class_key: e.class_key.clone(),
                        provenance,
                        event_id: e.event_id,
                    },
                );
                if let Some(r) = self.rejections.get_mut(&e.class_key) {
                    r.remove(&e.zone_id);
                }
            }
            Action::Reject => {
                self.rejections.entry(e.class_key.clone()).or_default().insert(e.zone_id.clone());
                if self.positives.get(&e.zone_id).is_some_and(|p| p.class_key == e.class_key) {
                    self.positives.remove(&e.zone_id);
                }
            }
        }
        self.watermark = self.watermark.max(e.event_id);
    }

    pub fn replay<'a>(events: impl IntoIterator<Item = &'a LabelEvent>) -> Self {
        let mut s = Self::default();
        for e in events {
            s.apply(e);
        }
        s
    }

    pub fn positives_of<'a>(&'a self, class_key: &'a str) -> impl Iterator<Item = (&'a String, &'a PositiveLabel)> + 'a {
        self.positives.iter().filter(move |(_, p)| p.class_key == class_key)
    }

    pub fn count(&self, class_key: &str) -> usize {
        self.positives_of(class_key).count()
    }

    pub fn is_rejected(&self, class_key: &str, zone_id: &str) -> bool {
        self.rejections.get(class_key).is_some_and(|r| r.contains(zone_id))
    }
}

/// Appends records as JSON lines and syncs the file once.
pub fn append_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<()> {
    if records.is_empty() {
        return Ok(());
    }
    let mut buf = Vec::new();
    for r in records {
        serde_json::to_writer(&mut buf, r)?;
        buf.push(b'\n');
    }
    let mut f = OpenOptions::new().create(true).append(true).open(path)?;
    f.write_all(&buf)?;
    f.sync_data()?;
    Ok(())
}

/// A trailing line that could not be parsed (interrupted write).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TornRecord {
    pub line: usize,
    pub bytes: usize,
}

/// Reads a JSON-lines file. A malformed final line is dropped and
/// reported; a malformed line elsewhere is an error.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<(Vec<T>, Option<TornRecord>)> {
    if !path.exists() {
        return Ok((Vec::new(), None));
    }
    let lines: Vec<String> = BufReader::new(File::open(path)?).lines().collect::<std::io::Result<_>>()?;
    let mut out = Vec::with_capacity(lines.len());
    for (i, line) in lines.iter().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str(line) {
            Ok(v) => out.push(v),
            Err(_) if i + 1 == lines.len() => {
                return Ok((
                    out,
                    Some(TornRecord {
                        line: i + 1,
                        bytes: line.len(),
                    }),
                ))
            }
            Err(e) => return Err(e.into()),
        }
    }
    Ok((out, None))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    pub(crate) fn ev(id: u64, zone: &str, class: &str, action: Action) -> LabelEvent {
        LabelEvent {
            event_id: id,
            zone_id: zone.into(),
            class_key: class.into(),
            label: class.into(),
            action,
            mode: Mode::Deepening,
            user: "u".into(),
            batch_id: "b".into(),
            timestamp: id as i64 * 1000,
            book_id: "book".into(),
        }
    }

    #[test]
    fn last_event_wins() {
        let s = LabelState::replay(&[
            ev(1, "z", "a", Action::New),
            ev(2, "z", "b", Action::Confirm),
        ]);
        assert_eq!(s.positives["z"].class_key, "b");
        assert_eq!(s.count("a"), 0);
        let s = LabelState::replay(&[ev(1, "z", "a", Action::New), ev(2, "z", "a", Action::Reject)]);
        assert_eq!(s.count("a"), 0);
        assert!(s.is_rejected("a", "z"));
        let s = LabelState::replay(&[ev(1, "z", "a", Action::Reject), ev(2, "z", "a", Action::Confirm)]);
        assert!(!s.is_rejected("a", "z"));
        assert_eq!(s.count("a"), 1);
    }

    #[test]
    fn jsonl_round_trip_and_torn_tail() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("events.jsonl");
        let events = vec![ev(1, "z1", "a", Action::New), ev(2, "z2", "a", Action::Confirm)];
        append_jsonl(&p, &events).unwrap();
        let (back, torn) = read_jsonl::<LabelEvent>(&p).unwrap();
        assert_eq!(back, events);
        assert!(torn.is_none());

        let mut f = OpenOptions::new().append(true).open(&p).unwrap();
        f.write_all(br#"{"event_id":3,"zone_id":"z"#).unwrap();
        let (back, torn) = read_jsonl::<LabelEvent>(&p).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(torn.unwrap().line, 3);
    }

    fn action() -> impl Strategy<Value = Action> {
        prop_oneof![Just(Action::New), Just(Action::Confirm), Just(Action::Reject)]
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]

        #[test]
        fn reject_never_adds_positives(
            script in prop::collection::vec((0usize..5, 0usize..3, action()), 1..40),
            zone in 0usize..5, class in 0usize..3,
        ) {
            let events: Vec<LabelEvent> = script.iter().enumerate()
                .map(|(i, (z, c, a))| ev(i as u64 + 1, &format!("z{z}"), &format!("c{c}"), *a))
                .collect();
            let mut s = LabelState::replay(&events);
            let before: Vec<usize> = (0..3).map(|c| s.count(&format!("c{c}"))).collect();
            s.apply(&ev(1000, &format!("z{zone}"), &format!("c{class}"), Action::Reject));
            for c in 0..3 {
                let key = format!("c{c}");
                prop_assert!(s.count(&key) <= before[c]);
            }
            // replay from scratch reproduces the incremental state
            let mut all = events.clone();
            all.push(ev(1000, &format!("z{zone}"), &format!("c{class}"), Action::Reject));
            prop_assert_eq!(LabelState::replay(&all), s);
        }
    }
}
