use std::fmt::Write;

use super::export::{export_transcription, ELLIPSIS};
use crate::error::{Error, Result};
use crate::harvest::Engine;
use crate::segmentation::{LineBand, Rect};

const NAMESPACE: &str = "http://schema.primaresearch.org/PAGE/gts/pagecontent/2019-07-15";

fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&apos;"),
            c => out.push(c),
        }
    }
    out
}

/// Corners of `r`, clockwise from the top left; right and bottom edges are
/// exclusive.
fn rect_points(r: &Rect) -> String {
    let (x0, y0, x1, y1) = (r.x, r.y, r.x + r.w, r.y + r.h);
    format!("{x0},{y0} {x1},{y0} {x1},{y1} {x0},{y1}")
}

/// Seam polyline with collinear runs collapsed to their end points.
fn seam_points(seam: &[usize], reverse: bool) -> Vec<(usize, usize)> {
    let mut pts: Vec<(usize, usize)> = Vec::new();
    let n = seam.len();
    for i in 0..n {
        let keep = i == 0 || i == n - 1 || seam[i] != seam[i - 1] || seam[i] != seam[i + 1];
        if keep {
            pts.push((i, seam[i]));
        }
    }
    if reverse {
        pts.reverse();
    }
    pts
}

fn line_points(band: &LineBand, width: usize) -> String {
    match (&band.seam_top, &band.seam_bottom) {
        (Some(top), Some(bottom)) if !top.is_empty() && top.len() == bottom.len() => {
            let pts: Vec<String> = seam_points(top, false)
                .into_iter()
                .chain(seam_points(bottom, true))
                .map(|(x, y)| format!("{x},{y}"))
                .collect();
            pts.join(" ")
        }
        _ => rect_points(&Rect::new(0, band.top, width, band.height())),
    }
}

/// PAGE-XML subset: one text region holding every line band; words are the
/// rendered (non-ellipsis) zones of the provisional transcription.
pub fn export_pagexml(e: &Engine, page_id: &str, floor_offset: f64) -> Result<String> {
    let page = e.page(page_id).ok_or_else(|| Error::NotFound {
        kind: "page",
        id: page_id.to_string(),
    })?;
    let t = export_transcription(e, page_id, floor_offset)?;
    let (w, h) = (page.mask.width(), page.mask.height());
    let mut s = String::new();
    s.push_str("<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n");
    let _ = writeln!(s, "<PcGts xmlns=\"{NAMESPACE}\">");
    let _ = writeln!(
        s,
        "  <Page imageFilename=\"{}\" imageWidth=\"{w}\" imageHeight=\"{h}\">",
        escape(&page.image_filename)
    );
    if !page.bands.is_empty() {
        let _ = writeln!(s, "    <TextRegion id=\"r0\">");
        let _ = writeln!(s, "      <Coords points=\"{}\"/>", rect_points(&Rect::new(0, 0, w, h)));
        for (li, band) in page.bands.iter().enumerate() {
            let line = &t.lines[li];
            let _ = writeln!(s, "      <TextLine id=\"l{li}\">");
            let _ = writeln!(s, "        <Coords points=\"{}\"/>", line_points(band, w));
            for (wi, word) in line.words.iter().filter(|x| x.text != ELLIPSIS).enumerate() {
                let conf = if word.confirmed { "confirmed" } else { "hypothesis" };
                let _ = writeln!(
                    s,
                    "        <Word id=\"l{li}w{wi}\" custom=\"zone:{}; status:{conf}\">",
                    escape(&word.zone_id)
                );
                let _ = writeln!(s, "          <Coords points=\"{}\"/>", rect_points(&word.rect));
                let _ = writeln!(s, "          <TextEquiv><Unicode>{}</Unicode></TextEquiv>", escape(&word.text));
                let _ = writeln!(s, "        </Word>");
            }
            let _ = writeln!(s, "        <TextEquiv><Unicode>{}</Unicode></TextEquiv>", escape(&line.text));
            let _ = writeln!(s, "      </TextLine>");
        }
        let _ = writeln!(s, "    </TextRegion>");
    }
    s.push_str("  </Page>\n</PcGts>\n");
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harvest::{Action, EngineConfig, LabelBatch, LabelInput};
    use crate::imaging::{BinaryImage, GrayImage};

    fn parse_points(p: &str) -> Rect {
        let pts: Vec<(usize, usize)> = p
            .split(' ')
            .map(|xy| {
                let (x, y) = xy.split_once(',').unwrap();
                (x.parse().unwrap(), y.parse().unwrap())
            })
            .collect();
        let x0 = pts.iter().map(|p| p.0).min().unwrap();
        let y0 = pts.iter().map(|p| p.1).min().unwrap();
        let x1 = pts.iter().map(|p| p.0).max().unwrap();
        let y1 = pts.iter().map(|p| p.1).max().unwrap();
        Rect::new(x0, y0, x1 - x0, y1 - y0)
    }

    #[test]
    fn empty_page_has_no_regions() {
        let mut e = Engine::new(EngineConfig::synthetic());
        e.ingest_page("b", "blank", GrayImage::filled(30, 20, 255)).unwrap();
        let xml = export_pagexml(&e, "blank", 0.0).unwrap();
        let doc = roxmltree::Document::parse(&xml).unwrap();
        let page = doc.descendants().find(|n| n.has_tag_name("Page")).unwrap();
        assert_eq!(page.attribute("imageWidth"), Some("30"));
        assert_eq!(page.attribute("imageHeight"), Some("20"));
        assert!(doc.descendants().all(|n| !n.has_tag_name("TextRegion")));
        assert!(matches!(export_pagexml(&e, "nope", 0.0), Err(Error::NotFound { .. })));
    }

    #[test]
    fn two_confirmed_words_parse_back() {
        let mut e = Engine::new(EngineConfig::synthetic());
        let ink = BinaryImage::from_fn(100, 40, |x, y| (12..24).contains(&y) && ((10..30).contains(&x) || (60..85).contains(&x)));
        let gray = GrayImage::from_fn(100, 40, |x, y| if ink.get(x, y) { 0 } else { 240 });
        e.ingest_page("b", "p&<1>", gray).unwrap();
        let page = e.page("p&<1>").unwrap();
        assert_eq!(page.bands.len(), 1);
        // the two widest zones are the words
        let mut zones: Vec<_> = page.zone_ids.iter().map(|z| e.zone(z).unwrap().zone.clone()).collect();
        zones.retain(|z| z.w <= 25);
        assert_eq!(zones.len(), 2);
        let labels = zones
            .iter()
            .zip(["Stadt", "R\u{e4}t & \"Co\""])
            .map(|(z, l)| LabelInput {
                zone_id: z.zone_id.clone(),
                label: l.to_string(),
                action: Action::New,
                mode: None,
            })
            .collect();
        e.submit_labels(LabelBatch { batch_id: None, user: "u".into(), labels }, 0).unwrap();

        let xml = export_pagexml(&e, "p&<1>", 0.0).unwrap();
        let doc = roxmltree::Document::parse(&xml).unwrap();
        let lines: Vec<_> = doc.descendants().filter(|n| n.has_tag_name("TextLine")).collect();
        assert_eq!(lines.len(), 1);
        let words: Vec<_> = lines[0].children().filter(|n| n.has_tag_name("Word")).collect();
        assert_eq!(words.len(), 2);
        for (word, zone) in words.iter().zip(&zones) {
            let coords = word.children().find(|n| n.has_tag_name("Coords")).unwrap();
            assert_eq!(parse_points(coords.attribute("points").unwrap()), zone.rect());
        }
        let texts: Vec<&str> = doc
            .descendants()
            .filter(|n| n.has_tag_name("Unicode"))
            .map(|n| n.text().unwrap_or(""))
            .collect();
        assert_eq!(texts, ["Stadt", "R\u{e4}t & \"Co\"", "Stadt R\u{e4}t & \"Co\""]);
        assert!(xml.ends_with("</PcGts>\n") && !xml.contains('\r'));
    }

    #[test]
    fn seam_polyline_collapses_runs() {
        assert_eq!(seam_points(&[3, 3, 3, 4, 4], false), vec![(0, 3), (2, 3), (3, 4), (4, 4)]);
        let band = LineBand {
            seam_top: Some(vec![2, 2, 2]),
            seam_bottom: Some(vec![9, 9, 9]),
            ..LineBand::new(2, 9)
        };
        assert_eq!(line_points(&band, 3), "0,2 2,2 2,9 0,9");
    }
}
