use wordharvest::corpus::{synth_page, Corpus, CorpusSpec, SynthPage};
use wordharvest::imaging::binarize;
use wordharvest::segmentation::{
    atomic_segments, segment_lines_with, segment_page, LineParams, WordParams, ZoneSource,
};

/// `rows` text lines of `per_row` generated words each.
fn page(rows: usize, per_row: usize, seed: u64) -> SynthPage {
    let corpus = Corpus::generate(&CorpusSpec {
        classes: rows * per_row,
        per_class: 1,
        seed,
        ..CorpusSpec::default()
    })
    .unwrap();
    let images: Vec<Vec<_>> = corpus.instances.chunks(per_row).map(|c| c.iter().map(|i| i.image.clone()).collect()).collect();
    let labels: Vec<Vec<String>> = corpus.instances.chunks(per_row).map(|c| c.iter().map(|i| i.label.clone()).collect()).collect();
    synth_page(&images, &labels, 12, 16, 20)
}

#[test]
fn five_generated_lines_give_five_bands() {
    let params = LineParams::default();
    for seed in [1, 2, 3] {
        let p = page(5, 3, seed);
        // through a gray round trip, as uploaded pages are
        let ink = binarize(&p.image.to_gray()).unwrap();
        assert_eq!(ink, p.image);
        let bands = segment_lines_with(&ink, &params);
        assert_eq!(bands.len(), 5, "seed {seed}");
        let slack = params.window / 2;
        for (band, &(top, bottom)) in bands.iter().zip(&p.lines) {
            assert!(band.top.abs_diff(top) <= slack, "seed {seed}: top {} vs {top}", band.top);
            assert!(band.bottom.abs_diff(bottom) <= slack, "seed {seed}: bottom {} vs {bottom}", band.bottom);
        }
    }
}

#[test]
fn four_word_line_single_segments_match_the_layout() {
    // wide enough to bridge letter gaps, narrower than the 16 px word gap
    let window = 9;
    for seed in 1..=8 {
        let p = page(1, 4, seed);
        let segs = atomic_segments(&p.image, window, WordParams::default().valley_fraction);
        assert_eq!(segs.len(), 4, "seed {seed}: {segs:?}");
        for (seg, (label, truth)) in segs.iter().zip(&p.words[0]) {
            let iou = seg.iou(truth);
            assert!(iou >= 0.8, "seed {seed}: {label} IoU {iou:.3}");
        }
    }
}

#[test]
fn every_true_word_is_among_the_page_zones() {
    let p = page(5, 3, 9);
    let (bands, zones) = segment_page("p", &p.image, &LineParams::default(), &WordParams::default());
    assert_eq!(bands.len(), 5);
    assert!(zones.iter().all(|z| z.source == ZoneSource::Projection && z.w > 0 && z.h > 0));
    let mut ids: Vec<&str> = zones.iter().map(|z| z.zone_id.as_str()).collect();
    ids.sort();
    ids.dedup();
    assert_eq!(ids.len(), zones.len());
    for (line, words) in p.words.iter().enumerate() {
        for (label, truth) in words {
            let best = zones
                .iter()
                .filter(|z| z.line == line)
                .map(|z| z.rect().iou(truth))
                .fold(0.0, f64::max);
            assert!(best >= 0.8, "line {line} word {label}: best IoU {best:.3}");
        }
    }
}
