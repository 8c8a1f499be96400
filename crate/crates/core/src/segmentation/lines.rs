use serde::{Deserialize, Serialize};

use super::seam::{carve_seam, SeamCost};
use crate::imaging::{moving_average, BinaryImage};

/// One text line of a page. `bottom` is exclusive.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LineBand {
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub page_id: String,
    pub top: usize,
    pub bottom: usize,
    /// Curvilinear upper boundary, one row per page column.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seam_top: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seam_bottom: Option<Vec<usize>>,
}

impl LineBand {
    pub fn new(top: usize, bottom: usize) -> Self {
        Self {
            page_id: String::new(),
            top,
            bottom,
            seam_top: None,
            seam_bottom: None,
        }
    }

    pub fn height(&self) -> usize {
        self.bottom - self.top
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LineParams {
    /// Odd moving-average width for the row profile.
    pub window: usize,
    /// Core bands closer than this many rows are merged.
    pub min_gap: usize,
    /// Valley threshold as a fraction of the median non-zero row count.
    pub valley_fraction: f64,
    /// Extra rows on each side of a seam corridor.
    pub seam_margin: usize,
}

impl Default for LineParams {
    fn default() -> Self {
        Self {
            window: 5,
            min_gap: 3,
            valley_fraction: 0.2,
            seam_margin: 2,
        }
    }
}

/// `max(1, fraction * median of the non-zero counts)`.
pub(crate) fn valley_threshold(counts: &[u32], fraction: f64) -> f64 {
    let mut nz: Vec<u32> = counts.iter().copied().filter(|&c| c > 0).collect();
    if nz.is_empty() {
        return 1.0;
    }
    nz.sort_unstable();
    let m = nz.len();
    let median = if m % 2 == 1 {
        nz[m / 2] as f64
    } else {
        (nz[m / 2 - 1] as f64 + nz[m / 2] as f64) / 2.0
    };
    (fraction * median).max(1.0)
}

/// Largest odd number `<= min(window, len)`, at least 1.
pub(crate) fn fit_window(window: usize, len: usize) -> usize {
    let w = window.max(1).min(len.max(1));
    if w % 2 == 0 {
        w - 1
    } else {
        w
    }
}

/// Maximal runs where `pred` holds, as half-open ranges.
pub(crate) fn runs(len: usize, pred: impl Fn(usize) -> bool) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut start = None;
    for i in 0..len {
        match (pred(i), start) {
            (true, None) => start = Some(i),
            (false, Some(s)) => {
                out.push((s, i));
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        out.push((s, len));
    }
    out
}

pub fn segment_lines(img: &BinaryImage, window: usize, min_gap: usize) -> Vec<LineBand> {
    segment_lines_with(
        img,
        &LineParams {
            window,
            min_gap,
            ..LineParams::default()
        },
    )
}

/// Splits a page into line bands from its smoothed row profile.
///
/// Core bands are runs of rows whose smoothed ink count reaches the valley
/// threshold; cores separated by fewer than `min_gap` rows merge. Every
/// ink row is then assigned to the nearest core, so the bands tile the ink.
/// When no blank row separates two neighbouring cores, the boundary
/// between them is carved as a seam through the inter-core corridor.
pub fn segment_lines_with(img: &BinaryImage, params: &LineParams) -> Vec<LineBand> {
    let h = img.height();
    if img.is_empty() {
        return Vec::new();
    }
    let counts: Vec<u32> = (0..h)
        .map(|y| (0..img.width()).filter(|&x| img.get(x, y)).count() as u32)
        .collect();
    if counts.iter().all(|&c| c == 0) {
        return Vec::new();
    }
    let signal: Vec<f64> = counts.iter().map(|&c| c as f64).collect();
    let smoothed = moving_average(&signal, fit_window(params.window, h))
        .expect("window fitted to profile length");
    let thr = valley_threshold(&counts, params.valley_fraction);

    let mut cores = runs(h, |y| smoothed[y] >= thr);
    if cores.is_empty() {
        let first = counts.iter().position(|&c| c > 0).unwrap();
        let last = counts.iter().rposition(|&c| c > 0).unwrap();
        cores.push((first, last + 1));
    }
    let mut merged: Vec<(usize, usize)> = Vec::with_capacity(cores.len());
    for (s, e) in cores {
        match merged.last_mut() {
            Some(prev) if s - prev.1 < params.min_gap => prev.1 = e,
            _ => merged.push((s, e)),
        }
    }

    // Grow cores over the gaps: ink rows go to the closer neighbour.
    let n = merged.len();
    let mut bounds: Vec<(usize, usize)> = merged.clone();
    let first_ink = counts.iter().position(|&c| c > 0).unwrap();
    let last_ink = counts.iter().rposition(|&c| c > 0).unwrap() + 1;
    bounds[0].0 = bounds[0].0.min(first_ink);
    bounds[n - 1].1 = bounds[n - 1].1.max(last_ink);
    let mut seams: Vec<Option<Vec<usize>>> = vec![None; n.saturating_sub(1)];
    for i in 0..n.saturating_sub(1) {
        let (gap_s, gap_e) = (merged[i].1, merged[i + 1].0);
        let blank: Vec<usize> = (gap_s..gap_e).filter(|&y| counts[y] == 0).collect();
        let split = if blank.is_empty() {
            // touching lines: carve between the cores
            let top = gap_s.saturating_sub(params.seam_margin);
            let bottom = (gap_e + params.seam_margin).min(h);
            let mid = (gap_s + gap_e) / 2;
            if let Ok(cost) = SeamCost::from_ink(img, top, bottom) {
                let path: Vec<usize> = carve_seam(&cost).into_iter().map(|r| r + top).collect();
                seams[i] = Some(path);
            }
            mid
        } else {
            // split in the middle of the blank rows nearest the gap centre
            let centre = (gap_s + gap_e) as f64 / 2.0;
            *blank
                .iter()
                .min_by(|a, b| {
                    ((**a as f64) - centre)
                        .abs()
                        .partial_cmp(&((**b as f64) - centre).abs())
                        .unwrap()
                })
                .unwrap()
        };
        bounds[i].1 = split;
        bounds[i + 1].0 = split;
    }
    // Trim leading/trailing blank rows that are not between two lines.
    for b in bounds.iter_mut() {
        while b.0 < b.1 && counts[b.0] == 0 {
            b.0 += 1;
        }
        while b.1 > b.0 && counts[b.1 - 1] == 0 {
            b.1 -= 1;
        }
    }

    let mut bands: Vec<LineBand> = bounds
        .iter()
        .map(|&(t, b)| LineBand::new(t, b))
        .collect();
    for (i, s) in seams.into_iter().enumerate() {
        if let Some(path) = s {
            bands[i].seam_bottom = Some(path.clone());
            bands[i + 1].seam_top = Some(path);
        }
    }
    bands.retain(|b| b.top < b.bottom);
    bands
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_page_has_no_lines() {
        assert!(segment_lines(&BinaryImage::blank(30, 40), 5, 3).is_empty());
    }

    #[test]
    fn two_blocks_two_bands() {
        let img = BinaryImage::from_fn(40, 50, |x, y| {
            ((5..15).contains(&y) || (35..45).contains(&y)) && x % 3 != 0
        });
        let bands = segment_lines(&img, 5, 3);
        assert_eq!(bands.len(), 2);
        assert!(bands[0].top.abs_diff(5) <= 2 && bands[0].bottom.abs_diff(15) <= 2);
        assert!(bands[1].top.abs_diff(35) <= 2 && bands[1].bottom.abs_diff(45) <= 2);
    }

    #[test]
    fn every_ink_row_is_covered_once() {
        // a sparse descender row between two lines must still be claimed
        let img = BinaryImage::from_fn(30, 40, |x, y| {
            ((4..10).contains(&y) && x % 2 == 0) || (y == 12 && x == 3) || ((25..31).contains(&y) && x % 2 == 1)
        });
        let bands = segment_lines(&img, 3, 2);
        assert_eq!(bands.len(), 2);
        for y in 0..img.height() {
            let has_ink = (0..img.width()).any(|x| img.get(x, y));
            let n = bands.iter().filter(|b| (b.top..b.bottom).contains(&y)).count();
            if has_ink {
                assert_eq!(n, 1, "row {y}");
            }
        }
    }

    #[test]
    fn touching_lines_get_a_seam() {
        // two dense lines joined by a one-pixel stroke column, no blank row
        let img = BinaryImage::from_fn(30, 26, |x, y| {
            ((2..10).contains(&y) && x % 2 == 0) || ((14..22).contains(&y) && x % 2 == 0) || (x == 7 && (10..14).contains(&y))
        });
        let bands = segment_lines(&img, 3, 2);
        assert_eq!(bands.len(), 2);
        let seam = bands[0].seam_bottom.as_ref().expect("seam");
        assert_eq!(seam.len(), 30);
        assert_eq!(bands[1].seam_top.as_ref(), Some(seam));
        assert!(bands[0].bottom == bands[1].top);
        // seam stays within the corridor margin
        assert!(seam.iter().all(|&r| r + 2 + 4 >= bands[0].bottom && r <= bands[1].top + 6));
    }
}
