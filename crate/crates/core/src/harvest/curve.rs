use serde::{Deserialize, Serialize};

use super::events::LabelEvent;
use crate::error::{Error, Result};
use crate::Timestamp;

/// Book id used for the collection-wide curve.
pub const ALL_BOOKS: &str = "*";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct HarvestPoint {
    /// Start of the bucket, milliseconds.
    pub timestamp: Timestamp,
    pub cumulative_labels: usize,
    pub book_id: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HarvestCurve {
    pub book_id: String,
    pub bucket_secs: u64,
    /// One point per bucket that received labels.
    pub points: Vec<HarvestPoint>,
    /// Most labels in any 60-second window.
    pub peak_per_minute: usize,
}

impl HarvestCurve {
    /// `timestamp,cumulative,book_id` with a header row.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("timestamp,cumulative,book_id\n");
        for p in &self.points {
            s.push_str(&format!("{},{},{}\n", p.timestamp, p.cumulative_labels, p.book_id));
        }
        s
    }
}

/// Cumulative human labels (new and confirm) per time bucket, for one book
/// or, with `None`, for the whole log.
pub fn harvest_curve(events: &[LabelEvent], book_id: Option<&str>, bucket_secs: u64) -> Result<HarvestCurve> {
    if bucket_secs == 0 {
        return Err(Error::param("bucket must be positive"));
    }
    let bucket_ms = bucket_secs.saturating_mul(1000).min(i64::MAX as u64) as i64;
    let mut times: Vec<Timestamp> = events
        .iter()
        .filter(|e| e.action.is_label() && book_id.is_none_or(|b| e.book_id == b))
        .map(|e| e.timestamp)
        .collect();
    times.sort_unstable();

    let label = book_id.unwrap_or(ALL_BOOKS).to_string();
    let mut points: Vec<HarvestPoint> = Vec::new();
    for (i, &t) in times.iter().enumerate() {
        let start = t.div_euclid(bucket_ms) * bucket_ms;
        match points.last_mut() {
            Some(p) if p.timestamp == start => p.cumulative_labels = i + 1,
            _ => points.push(HarvestPoint {
                timestamp: start,
                cumulative_labels: i + 1,
                book_id: label.clone(),
            }),
        }
    }
    Ok(HarvestCurve {
        book_id: label,
        bucket_secs,
        points,
        peak_per_minute: peak_per_minute(&times),
    })
}

/// Largest number of sorted timestamps inside any window `[t, t + 60 s)`.
pub fn peak_per_minute(sorted: &[Timestamp]) -> usize {
    let mut best = 0;
    let mut lo = 0;
    for hi in 0..sorted.len() {
        while sorted[hi] - sorted[lo] >= 60_000 {
            lo += 1;
        }
        best = best.max(hi - lo + 1);
    }
    best
}
