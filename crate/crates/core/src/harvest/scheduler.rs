use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::events::LabelEvent;
use crate::Timestamp;

/// Why a class needs retraining. Variants are ordered by urgency.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reason {
    Policy,
    Rejection,
    NewLabel,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecomputeRequest {
    pub class_key: String,
    pub reason: Reason,
    pub enqueued_at: Timestamp,
    pub debounce_deadline: Timestamp,
    /// Book of the latest triggering label.
    pub book_id: String,
    /// Failed attempts so far.
    #[serde(default)]
    pub attempts: u32,
}

/// At most one pending request per class. Bursts coalesce: the deadline
/// trails the latest trigger.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecomputeQueue {
    pending: BTreeMap<String, RecomputeRequest>,
}

impl RecomputeQueue {
    pub fn enqueue(&mut self, class_key: &str, reason: Reason, book_id: &str, now: Timestamp, debounce_ms: i64) -> &RecomputeRequest {
        let deadline = now.saturating_add(debounce_ms.max(0));
        let r = self
            .pending
            .entry(class_key.to_string())
            .and_modify(|r| {
                r.reason = r.reason.max(reason);
                r.debounce_deadline = r.debounce_deadline.max(deadline);
                r.book_id = book_id.to_string();
            })
            .or_insert_with(|| RecomputeRequest {
                class_key: class_key.to_string(),
                reason,
                enqueued_at: now,
                debounce_deadline: deadline,
                book_id: book_id.to_string(),
                attempts: 0,
            });
        r
    }

    pub fn get(&self, class_key: &str) -> Option<&RecomputeRequest> {
        self.pending.get(class_key)
    }

    pub fn len(&self) -> usize {
        self.pending.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pending.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &RecomputeRequest> {
        self.pending.values()
    }

    /// Requests whose debounce deadline has passed.
    pub fn ready(&self, now: Timestamp) -> impl Iterator<Item = &RecomputeRequest> {
        self.pending.values().filter(move |r| r.debounce_deadline <= now)
    }

    /// Drops the request if nothing re-triggered it since `seen` was read.
    pub fn complete(&mut self, seen: &RecomputeRequest) -> bool {
        if self.pending.get(&seen.class_key) == Some(seen) {
            self.pending.remove(&seen.class_key);
            true
        } else {
            false
        }
    }

    /// Pushes a failed request back with exponential backoff.
    pub fn retry(&mut self, class_key: &str, now: Timestamp, backoff_ms: i64) {
        if let Some(r) = self.pending.get_mut(class_key) {
            r.attempts += 1;
            let factor = 1i64 << r.attempts.min(16).saturating_sub(1);
            r.debounce_deadline = r.debounce_deadline.max(now.saturating_add(backoff_ms.saturating_mul(factor)));
        }
    }

    pub fn remove(&mut self, class_key: &str) -> Option<RecomputeRequest> {
        self.pending.remove(class_key)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HeatStatus {
    Hot,
    Cold,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BookHeat {
    pub book_id: String,
    /// Human labels in the trailing window.
    pub recent_labels: usize,
    pub status: HeatStatus,
}

/// Heat of every book that received labels in `(now - window, now]`, plus
/// any `known` books with none.
pub fn book_heat<'a>(
    events: impl IntoIterator<Item = &'a LabelEvent>,
    known: impl IntoIterator<Item = &'a str>,
    now: Timestamp,
    window_ms: i64,
    threshold: usize,
) -> BTreeMap<String, BookHeat> {
    let mut counts: BTreeMap<String, usize> = known.into_iter().map(|b| (b.to_string(), 0)).collect();
    for e in events {
        if e.action.is_label() && e.timestamp <= now && e.timestamp > now.saturating_sub(window_ms) {
            *counts.entry(e.book_id.clone()).or_default() += 1;
        }
    }
    counts
        .into_iter()
        .map(|(book_id, recent_labels)| {
            let status = if recent_labels >= threshold {
                HeatStatus::Hot
            } else {
                HeatStatus::Cold
            };
            (
                book_id.clone(),
                BookHeat {
                    book_id,
                    recent_labels,
                    status,
                },
            )
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harvest::events::{Action, Mode};
    use proptest::prelude::*;

    #[test]
    fn burst_coalesces_with_trailing_deadline() {
        let mut q = RecomputeQueue::default();
        q.enqueue("a", Reason::Rejection, "b1", 0, 5000);
        q.enqueue("a", Reason::NewLabel, "b1", 3000, 5000);
        q.enqueue("a", Reason::Rejection, "b2", 4000, 5000);
        assert_eq!(q.len(), 1);
        let r = q.get("a").unwrap();
        assert_eq!((r.enqueued_at, r.debounce_deadline, r.reason), (0, 9000, Reason::NewLabel));
        assert_eq!(r.book_id, "b2");
        assert_eq!(q.ready(8999).count(), 0);
        assert_eq!(q.ready(9000).count(), 1);
    }

    #[test]
    fn complete_only_if_unchanged() {
        let mut q = RecomputeQueue::default();
        let seen = q.enqueue("a", Reason::NewLabel, "b", 0, 0).clone();
        q.enqueue("a", Reason::NewLabel, "b", 10, 0);
        assert!(!q.complete(&seen));
        let seen = q.get("a").unwrap().clone();
        assert!(q.complete(&seen));
        assert!(q.is_empty());
    }

    #[test]
    fn retry_backs_off() {
        let mut q = RecomputeQueue::default();
        q.enqueue("a", Reason::NewLabel, "b", 0, 0);
        q.retry("a", 100, 1000);
        assert_eq!(q.get("a").unwrap().debounce_deadline, 1100);
        q.retry("a", 100, 1000);
        assert_eq!(q.get("a").unwrap().debounce_deadline, 2100);
    }

    fn ev(ts: i64, book: &str, action: Action) -> LabelEvent {
        LabelEvent {
            event_id: ts as u64,
            zone_id: "z".into(),
            class_key: "c".into(),
            label: "c".into(),
            action,
            mode: Mode::Deepening,
            user: "u".into(),
            batch_id: "b".into(),
            timestamp: ts,
            book_id: book.into(),
        }
    }

    #[test]
    fn heat_counts_labels_in_window() {
        let mut events: Vec<LabelEvent> = (0..10).map(|i| ev(100 + i, "hot", Action::Confirm)).collect();
        events.push(ev(105, "cold", Action::Confirm));
        events.push(ev(106, "cold", Action::Reject));
        events.push(ev(1, "hot", Action::Confirm));
        let h = book_heat(&events, ["idle"], 200, 150, 10);
        assert_eq!(h["hot"].status, HeatStatus::Hot);
        assert_eq!(h["hot"].recent_labels, 10);
        assert_eq!(h["cold"].recent_labels, 1);
        assert_eq!(h["idle"].status, HeatStatus::Cold);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(200))]

        #[test]
        fn one_pending_request_per_class(
            ops in prop::collection::vec((0usize..4, 0u8..3, 0i64..10_000), 0..60),
        ) {
            let mut q = RecomputeQueue::default();
            let mut now = 0;
            for (c, r, dt) in ops {
                now += dt;
                let reason = [Reason::Policy, Reason::Rejection, Reason::NewLabel][r as usize];
                let before = q.get(&format!("c{c}")).cloned();
                let after = q.enqueue(&format!("c{c}"), reason, "b", now, 5000).clone();
                if let Some(b) = before {
                    prop_assert_eq!(after.enqueued_at, b.enqueued_at);
                    prop_assert!(after.reason >= b.reason);
                    prop_assert!(after.debounce_deadline >= b.debounce_deadline);
                }
                prop_assert_eq!(after.debounce_deadline, now + 5000);
            }
            let keys: Vec<&String> = q.iter().map(|r| &r.class_key).collect();
            let mut dedup = keys.clone();
            dedup.dedup();
            prop_assert_eq!(keys.len(), dedup.len());
            prop_assert!(q.len() <= 4);
        }
    }
}
