use serde::{Deserialize, Serialize};

use super::lines::{fit_window, runs, valley_threshold, LineBand};
use crate::imaging::{moving_average, BinaryImage};

/// Axis-aligned rectangle; `x`/`y` are the top-left pixel.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Rect {
    pub x: usize,
    pub y: usize,
    pub w: usize,
    pub h: usize,
}

impl Rect {
    pub fn new(x: usize, y: usize, w: usize, h: usize) -> Self {
        Self { x, y, w, h }
    }

    pub fn area(&self) -> usize {
        self.w * self.h
    }

    pub fn union(&self, other: &Rect) -> Rect {
        let x0 = self.x.min(other.x);
        let y0 = self.y.min(other.y);
        let x1 = (self.x + self.w).max(other.x + other.w);
        let y1 = (self.y + self.h).max(other.y + other.h);
        Rect::new(x0, y0, x1 - x0, y1 - y0)
    }

    pub fn intersection_area(&self, other: &Rect) -> usize {
        let x0 = self.x.max(other.x);
        let y0 = self.y.max(other.y);
        let x1 = (self.x + self.w).min(other.x + other.w);
        let y1 = (self.y + self.h).min(other.y + other.h);
        x1.saturating_sub(x0) * y1.saturating_sub(y0)
    }

    pub fn iou(&self, other: &Rect) -> f64 {
        let inter = self.intersection_area(other);
        let uni = self.area() + other.area() - inter;
        if uni == 0 {
            0.0
        } else {
            inter as f64 / uni as f64
        }
    }

    pub fn translate(&self, dx: usize, dy: usize) -> Rect {
        Rect::new(self.x + dx, self.y + dy, self.w, self.h)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ZoneSource {
    /// Produced by the projection-profile over-segmentation.
    Projection,
    /// Added by another segmenter or by hand.
    External,
}

/// A candidate word region on a page, in page coordinates.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct WordZone {
    pub zone_id: String,
    pub x: usize,
    pub y: usize,
    pub w: usize,
    pub h: usize,
    /// Index of the line band the zone was cut from.
    pub line: usize,
    pub source: ZoneSource,
}

impl WordZone {
    pub fn new(page_id: &str, line: usize, rect: Rect, source: ZoneSource) -> Self {
        Self {
            zone_id: zone_id(page_id, line, &rect),
            x: rect.x,
            y: rect.y,
            w: rect.w,
            h: rect.h,
            line,
            source,
        }
    }

    pub fn rect(&self) -> Rect {
        Rect::new(self.x, self.y, self.w, self.h)
    }
}

/// `page_id#line_idx#x:y:w:h`
pub fn zone_id(page_id: &str, line: usize, r: &Rect) -> String {
    format!("{page_id}#{line}#{}:{}:{}:{}", r.x, r.y, r.w, r.h)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WordParams {
    pub window: usize,
    pub max_merge: usize,
    pub valley_fraction: f64,
}

impl Default for WordParams {
    fn default() -> Self {
        Self {
            window: 5,
            max_merge: 4,
            valley_fraction: 0.2,
        }
    }
}

/// Atomic segments of a band: runs of the smoothed column profile at or
/// above the valley threshold, each shrunk to the bounding box of its ink.
pub fn atomic_segments(band: &BinaryImage, window: usize, valley_fraction: f64) -> Vec<Rect> {
    if band.is_empty() {
        return Vec::new();
    }
    let w = band.width();
    let counts: Vec<u32> = (0..w)
        .map(|x| (0..band.height()).filter(|&y| band.get(x, y)).count() as u32)
        .collect();
    if counts.iter().all(|&c| c == 0) {
        return Vec::new();
    }
    let signal: Vec<f64> = counts.iter().map(|&c| c as f64).collect();
    let smoothed = moving_average(&signal, fit_window(window, w)).expect("fitted window");
    let thr = valley_threshold(&counts, valley_fraction);
    runs(w, |x| smoothed[x] >= thr)
        .into_iter()
        .filter_map(|(x0, x1)| {
            band.crop(x0, 0, x1 - x0, band.height())
                .ink_bbox()
                .map(|(bx, by, bw, bh)| Rect::new(x0 + bx, by, bw, bh))
        })
        .collect()
}

/// Over-segmentation: every run of `1..=max_merge` consecutive atomic
/// segments becomes a candidate zone (band coordinates).
pub fn oversegment_words(band: &BinaryImage, window: usize, max_merge: usize) -> Vec<Rect> {
    oversegment_with(
        band,
        &WordParams {
            window,
            max_merge,
            ..WordParams::default()
        },
    )
}

pub fn oversegment_with(band: &BinaryImage, params: &WordParams) -> Vec<Rect> {
    let segs = atomic_segments(band, params.window, params.valley_fraction);
    let mut zones = Vec::new();
    for k in 1..=params.max_merge {
        for start in 0..segs.len().saturating_sub(k - 1) {
            let r = segs[start + 1..start + k]
                .iter()
                .fold(segs[start], |acc, s| acc.union(s));
            zones.push(r);
        }
    }
    zones
}

/// Cuts a band out of its page and over-segments it into page-coordinate
/// zones tagged `projection`.
pub fn zones_for_band(
    page_id: &str,
    line: usize,
    band: &LineBand,
    page: &BinaryImage,
    params: &WordParams,
) -> Vec<WordZone> {
    let strip = band_strip(band, page);
    oversegment_with(&strip, params)
        .into_iter()
        .map(|r| WordZone::new(page_id, line, r.translate(0, band.top), ZoneSource::Projection))
        .collect()
}

/// Band pixels; with seams, ink outside the curvilinear boundaries is
/// removed.
pub fn band_strip(band: &LineBand, page: &BinaryImage) -> BinaryImage {
    let mut strip = page.crop(0, band.top, page.width(), band.height());
    for x in 0..strip.width() {
        for y in 0..strip.height() {
            let row = band.top + y;
            let above = band.seam_top.as_ref().is_some_and(|s| row < s[x]);
            let below = band.seam_bottom.as_ref().is_some_and(|s| row >= s[x]);
            if above || below {
                strip.set(x, y, false);
            }
        }
    }
    strip
}
