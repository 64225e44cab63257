use std::collections::BTreeSet;

use holescope::embed::Embedding;
use holescope::render::{labels_from_truth, render_svg, PointLabel, SvgStyle};
use holescope::scenario::{GridSpec, HoleGroundTruth, Location};
use ndarray::Array2;

fn grid_embedding() -> (Embedding, HoleGroundTruth) {
    let g = GridSpec { rows: 12, cols: 12, spacing: 1.0, origin: Location::default(), ue_height: 1.5 };
    let ch: BTreeSet<usize> = (4..7).flat_map(|r| (4..7).map(move |c| r * 12 + c)).collect();
    let truth = HoleGroundTruth::from_ch(ch.clone(), &g);
    let ids: Vec<usize> = (0..g.len()).filter(|i| !ch.contains(i)).collect();
    let coords = Array2::from_shape_fn((ids.len(), 2), |(r, d)| {
        let (row, col) = g.row_col(ids[r]);
        if d == 0 { col as f64 } else { row as f64 }
    });
    (Embedding::new(coords, ids).unwrap(), truth)
}

#[test]
fn svg_is_well_formed_with_one_circle_per_sample() {
    let (emb, truth) = grid_embedding();
    let labels = labels_from_truth(&emb, &truth);
    let svg = render_svg(&emb, Some(&labels), &SvgStyle::default()).unwrap();
    let doc = roxmltree::Document::parse(&svg).unwrap();
    assert_eq!(doc.root_element().tag_name().name(), "svg");
    let circles: Vec<_> = doc.descendants().filter(|n| n.has_tag_name("circle")).collect();
    assert_eq!(circles.len(), emb.len());
    // no axes or text other than per-point tooltips
    assert!(doc.descendants().all(|n| !n.has_tag_name("line") && !n.has_tag_name("text")));
    for c in &circles {
        for attr in ["cx", "cy"] {
            let v: f64 = c.attribute(attr).unwrap().parse().unwrap();
            assert!((0.0..=600.0).contains(&v));
        }
    }
}

#[test]
fn boundary_samples_are_black() {
    let (emb, truth) = grid_embedding();
    let labels = labels_from_truth(&emb, &truth);
    assert!(labels.contains(&PointLabel::Boundary));
    let svg = render_svg(&emb, Some(&labels), &SvgStyle::default()).unwrap();
    let doc = roxmltree::Document::parse(&svg).unwrap();
    let mut black = 0;
    for c in doc.descendants().filter(|n| n.has_tag_name("circle")) {
        let id: usize = c.children().find(|n| n.has_tag_name("title")).unwrap().text().unwrap().parse().unwrap();
        let is_boundary = truth.boundary_indices.contains(&id);
        assert_eq!(c.attribute("fill") == Some("#000000"), is_boundary, "sample {id}");
        black += is_boundary as usize;
    }
    assert_eq!(black, truth.boundary_indices.len());
}

#[test]
fn aspect_ratio_is_preserved() {
    let coords = ndarray::array![[0.0, 0.0], [10.0, 0.0], [10.0, 1.0]];
    let emb = Embedding::new(coords, vec![0, 1, 2]).unwrap();
    let svg = render_svg(&emb, None, &SvgStyle::default()).unwrap();
    let doc = roxmltree::Document::parse(&svg).unwrap();
    let pts: Vec<(f64, f64)> = doc
        .descendants()
        .filter(|n| n.has_tag_name("circle"))
        .map(|n| (n.attribute("cx").unwrap().parse().unwrap(), n.attribute("cy").unwrap().parse().unwrap()))
        .collect();
    let dx = pts[1].0 - pts[0].0;
    let dy = pts[1].1 - pts[2].1;
    assert!((dx / dy - 10.0).abs() < 0.05, "{dx} {dy}");
}
