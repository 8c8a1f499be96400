//! Page decomposition: line bands (profile + seam carving), background
//! filling for curvilinear crops, and word-zone over-segmentation.

mod background;
mod lines;
mod seam;
mod words;

pub use background::{fill_background, FilledCrop};
pub use lines::{segment_lines, segment_lines_with, LineBand, LineParams};
pub use seam::{carve_seam, SeamCost, INK_PENALTY};
pub use words::{
    atomic_segments, band_strip, oversegment_with, oversegment_words, zone_id, zones_for_band,
    Rect, WordParams, WordZone, ZoneSource,
};

use crate::imaging::BinaryImage;

/// Lines, then zones per line, for a whole page.
pub fn segment_page(
    page_id: &str,
    page: &BinaryImage,
    lines: &LineParams,
    words: &WordParams,
) -> (Vec<LineBand>, Vec<WordZone>) {
    let mut bands = segment_lines_with(page, lines);
    let mut zones = Vec::new();
    for (i, band) in bands.iter_mut().enumerate() {
        band.page_id = page_id.to_string();
        zones.extend(zones_for_band(page_id, i, band, page, words));
    }
    (bands, zones)
}
