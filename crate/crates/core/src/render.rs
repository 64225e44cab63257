//! Standalone SVG scatter plots of 2D embeddings.

use std::fmt::Write;

use serde::{Deserialize, Serialize};

use crate::embed::Embedding;
use crate::error::{Error, Result};
use crate::scenario::HoleGroundTruth;

/// Ground-truth region of a plotted sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PointLabel {
    Covered,
    Hole,
    /// Covered sample adjacent to a coverage hole; drawn black.
    Boundary,
}

impl PointLabel {
    fn fill(self) -> &'static str {
        match self {
            PointLabel::Covered => "#4c72b0",
            PointLabel::Hole => "#dd8452",
            PointLabel::Boundary => "#000000",
        }
    }
}

/// Labels for the embedding rows from CH ground truth.
pub fn labels_from_truth(emb: &Embedding, truth: &HoleGroundTruth) -> Vec<PointLabel> {
    emb.index_map
        .iter()
        .map(|id| {
            if truth.ch_indices.contains(id) {
                PointLabel::Hole
            } else if truth.boundary_indices.contains(id) {
                PointLabel::Boundary
            } else {
                PointLabel::Covered
            }
        })
        .collect()
}

fn default_size() -> f64 {
    600.0
}
fn default_radius() -> f64 {
    1.6
}
fn default_margin() -> f64 {
    12.0
}
fn default_opacity() -> f64 {
    0.85
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SvgStyle {
    /// Width and height of the square canvas in px.
    #[serde(default = "default_size")]
    pub size: f64,
    #[serde(default = "default_radius")]
    pub radius: f64,
    #[serde(default = "default_margin")]
    pub margin: f64,
    #[serde(default = "default_opacity")]
    pub opacity: f64,
}

impl Default for SvgStyle {
    fn default() -> Self {
        Self { size: default_size(), radius: default_radius(), margin: default_margin(), opacity: default_opacity() }
    }
}

/// Scatter plot without axes; boundary samples are drawn last so they stay visible.
pub fn render_svg(emb: &Embedding, labels: Option<&[PointLabel]>, style: &SvgStyle) -> Result<String> {
    if emb.dim() != 2 {
        return Err(Error::domain(format!("can only render 2D embeddings, got {}D", emb.dim())));
    }
    if let Some(l) = labels {
        if l.len() != emb.len() {
            return Err(Error::domain("one label per embedding row is required"));
        }
    }
    let mut lo = [f64::INFINITY; 2];
    let mut hi = [f64::NEG_INFINITY; 2];
    for row in emb.coords.rows() {
        for d in 0..2 {
            lo[d] = lo[d].min(row[d]);
            hi[d] = hi[d].max(row[d]);
        }
    }
    let span = (hi[0] - lo[0]).max(hi[1] - lo[1]);
    let inner = style.size - 2.0 * style.margin;
    let scale = if span > 0.0 { inner / span } else { 0.0 };
    // centre the data inside the canvas, y pointing up
    let offset = [
        style.margin + 0.5 * (inner - scale * (hi[0] - lo[0]).max(0.0)),
        style.margin + 0.5 * (inner - scale * (hi[1] - lo[1]).max(0.0)),
    ];

    let mut out = String::new();
    let _ = writeln!(out, r#"<?xml version="1.0" encoding="UTF-8"?>"#);
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{s}" height="{s}" viewBox="0 0 {s} {s}">"#,
        s = style.size
    );
    let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(out, r#"<g stroke="none" fill-opacity="{}">"#, style.opacity);

    let label = |i: usize| labels.map_or(PointLabel::Covered, |l| l[i]);
    let mut order: Vec<usize> = (0..emb.len()).collect();
    order.sort_by_key(|&i| (label(i) == PointLabel::Boundary, i));
    for i in order {
        let row = emb.coords.row(i);
        let x = offset[0] + scale * (row[0] - lo[0]);
        let y = style.size - (offset[1] + scale * (row[1] - lo[1]));
        let _ = writeln!(
            out,
            r#"<circle cx="{x:.2}" cy="{y:.2}" r="{}" fill="{}"><title>{}</title></circle>"#,
            style.radius,
            label(i).fill(),
            emb.index_map[i]
        );
    }
    out.push_str("</g>\n</svg>\n");
    Ok(out)
}
