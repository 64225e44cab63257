use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::embed::Embedding;
use crate::error::{Error, Result};
use crate::scenario::{GridSpec, HoleGroundTruth};

const MARGIN: f64 = 0.05;
const OVERLAP_TOLERANCE: usize = 2;

fn default_grid_size() -> usize {
    128
}
fn default_closing_radius() -> usize {
    1
}
fn default_min_hole_area() -> f64 {
    0.002
}
fn default_open_closing_radius() -> usize {
    4
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RasterConfig {
    #[serde(default = "default_grid_size")]
    pub grid_size: usize,
    /// Occupancy dilation radius in cells.
    #[serde(default = "default_closing_radius")]
    pub closing_radius: usize,
    /// Minimum hole area as a fraction of the occupied bounding-box cells.
    #[serde(default = "default_min_hole_area")]
    pub min_hole_area: f64,
    /// Stronger dilation used to find voids that open onto the outside.
    #[serde(default = "default_open_closing_radius")]
    pub open_closing_radius: usize,
}

impl Default for RasterConfig {
    fn default() -> Self {
        Self {
            grid_size: default_grid_size(),
            closing_radius: default_closing_radius(),
            min_hole_area: default_min_hole_area(),
            open_closing_radius: default_open_closing_radius(),
        }
    }
}

impl RasterConfig {
    pub fn validate(&self) -> Result<()> {
        if self.grid_size < 8 {
            return Err(Error::domain(format!("raster grid size must be >= 8, got {}", self.grid_size)));
        }
        if !(0.0..=1.0).contains(&self.min_hole_area) {
            return Err(Error::domain("min_hole_area must lie in [0, 1]"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hole {
    pub area_cells: usize,
    pub centroid: [f64; 2],
    pub boundary_sample_ids: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HoleReport {
    pub num_holes: usize,
    pub holes: Vec<Hole>,
    /// Voids that open onto the outside region.
    pub open_anomalies: Vec<Hole>,
}

impl HoleReport {
    pub fn boundary_ids(&self) -> impl Iterator<Item = usize> + '_ {
        self.holes.iter().flat_map(|h| h.boundary_sample_ids.iter().copied())
    }
}

struct Raster {
    g: usize,
    lo: [f64; 2],
    span: [f64; 2],
    /// Cell of every embedding row.
    cells: Vec<usize>,
    occupied: Vec<bool>,
}

impl Raster {
    fn new(emb: &Embedding, g: usize) -> Self {
        let mut lo = [f64::INFINITY; 2];
        let mut hi = [f64::NEG_INFINITY; 2];
        for row in emb.coords.rows() {
            for d in 0..2 {
                lo[d] = lo[d].min(row[d]);
                hi[d] = hi[d].max(row[d]);
            }
        }
        let mut span = [0.0; 2];
        for d in 0..2 {
            let mut s = hi[d] - lo[d];
            if s <= 0.0 {
                s = 1.0;
            }
            lo[d] -= MARGIN * s;
            span[d] = s * (1.0 + 2.0 * MARGIN);
        }
        let cell_of = |v: f64, d: usize| (((v - lo[d]) / span[d] * g as f64).floor().max(0.0) as usize).min(g - 1);
        let cells: Vec<usize> = emb.coords.rows().into_iter().map(|r| cell_of(r[1], 1) * g + cell_of(r[0], 0)).collect();
        let mut occupied = vec![false; g * g];
        cells.iter().for_each(|&c| occupied[c] = true);
        Self { g, lo, span, cells, occupied }
    }

    fn centre(&self, cell: usize) -> [f64; 2] {
        let (r, c) = (cell / self.g, cell % self.g);
        [
            self.lo[0] + (c as f64 + 0.5) / self.g as f64 * self.span[0],
            self.lo[1] + (r as f64 + 0.5) / self.g as f64 * self.span[1],
        ]
    }

    fn occupied_bbox_cells(&self) -> usize {
        let (mut r0, mut r1, mut c0, mut c1) = (usize::MAX, 0, usize::MAX, 0);
        for (i, _) in self.occupied.iter().enumerate().filter(|(_, &o)| o) {
            let (r, c) = (i / self.g, i % self.g);
            r0 = r0.min(r);
            r1 = r1.max(r);
            c0 = c0.min(c);
            c1 = c1.max(c);
        }
        (r1 - r0 + 1) * (c1 - c0 + 1)
    }
}

/// Chebyshev dilation; cells outside the raster count as `outside`.
fn morph(mask: &[bool], g: usize, radius: usize, dilate: bool) -> Vec<bool> {
    if radius == 0 {
        return mask.to_vec();
    }
    let r = radius as isize;
    let get = |row: isize, col: isize| {
        if row < 0 || col < 0 || row >= g as isize || col >= g as isize {
            !dilate
        } else {
            mask[row as usize * g + col as usize]
        }
    };
    // separable square structuring element: rows then columns
    let mut pass = vec![false; g * g];
    for row in 0..g as isize {
        for col in 0..g as isize {
            let hit = (-r..=r).map(|d| get(row, col + d));
            pass[row as usize * g + col as usize] = if dilate { hit.into_iter().any(|v| v) } else { hit.into_iter().all(|v| v) };
        }
    }
    let get = |row: isize, col: isize| {
        if row < 0 || col < 0 || row >= g as isize || col >= g as isize {
            !dilate
        } else {
            pass[row as usize * g + col as usize]
        }
    };
    let mut out = vec![false; g * g];
    for row in 0..g as isize {
        for col in 0..g as isize {
            let hit = (-r..=r).map(|d| get(row + d, col));
            out[row as usize * g + col as usize] = if dilate { hit.into_iter().any(|v| v) } else { hit.into_iter().all(|v| v) };
        }
    }
    out
}

fn dilate(mask: &[bool], g: usize, radius: usize) -> Vec<bool> {
    morph(mask, g, radius, true)
}

fn neighbors4(cell: usize, g: usize) -> impl Iterator<Item = usize> {
    let (r, c) = (cell / g, cell % g);
    [
        (r > 0).then(|| cell - g),
        (r + 1 < g).then(|| cell + g),
        (c > 0).then(|| cell - 1),
        (c + 1 < g).then(|| cell + 1),
    ]
    .into_iter()
    .flatten()
}

/// Empty cells reachable from the raster border through empty cells.
fn outside(filled: &[bool], g: usize) -> Vec<bool> {
    let mut out = vec![false; g * g];
    let mut queue = VecDeque::new();
    for i in 0..g {
        for cell in [i, (g - 1) * g + i, i * g, i * g + g - 1] {
            if !filled[cell] && !out[cell] {
                out[cell] = true;
                queue.push_back(cell);
            }
        }
    }
    while let Some(cell) = queue.pop_front() {
        for n in neighbors4(cell, g) {
            if !filled[n] && !out[n] {
                out[n] = true;
                queue.push_back(n);
            }
        }
    }
    out
}

/// 4-connected components of `mask`, each sorted, in scan order.
fn components(mask: &[bool], g: usize) -> Vec<Vec<usize>> {
    let mut seen = vec![false; g * g];
    let mut out = Vec::new();
    for start in 0..g * g {
        if !mask[start] || seen[start] {
            continue;
        }
        seen[start] = true;
        let mut members = vec![start];
        let mut head = 0;
        while head < members.len() {
            let cell = members[head];
            head += 1;
            for n in neighbors4(cell, g) {
                if mask[n] && !seen[n] {
                    seen[n] = true;
                    members.push(n);
                }
            }
        }
        members.sort_unstable();
        out.push(members);
    }
    out
}

fn describe(raster: &Raster, emb: &Embedding, cells: &[usize], reach: usize) -> Hole {
    let g = raster.g;
    let mut near = vec![false; g * g];
    for &cell in cells {
        near[cell] = true;
    }
    // samples within `reach` cells (Chebyshev) of the void
    let near = dilate(&near, g, reach);
    let mut ids: Vec<usize> = raster
        .cells
        .iter()
        .zip(&emb.index_map)
        .filter(|(&c, _)| near[c])
        .map(|(_, &id)| id)
        .collect();
    ids.sort_unstable();
    ids.dedup();
    let mut centroid = [0.0; 2];
    for &cell in cells {
        let c = raster.centre(cell);
        centroid[0] += c[0];
        centroid[1] += c[1];
    }
    centroid.iter_mut().for_each(|v| *v /= cells.len() as f64);
    Hole { area_cells: cells.len(), centroid, boundary_sample_ids: ids }
}

/// Enclosed voids of a 2D embedding, with their surrounding samples.
pub fn detect_holes(emb: &Embedding, rcfg: &RasterConfig) -> Result<HoleReport> {
    rcfg.validate()?;
    if emb.dim() != 2 {
        return Err(Error::domain(format!("hole detection needs a 2D embedding, got {}D", emb.dim())));
    }
    if emb.len() < 3 {
        return Err(Error::domain("hole detection needs at least 3 points"));
    }
    let g = rcfg.grid_size;
    let raster = Raster::new(emb, g);
    let min_area = rcfg.min_hole_area * raster.occupied_bbox_cells() as f64;

    let filled = dilate(&raster.occupied, g, rcfg.closing_radius);
    let out = outside(&filled, g);
    let enclosed: Vec<bool> = (0..g * g).map(|i| !filled[i] && !out[i]).collect();
    let reach = rcfg.closing_radius + 1;
    let holes: Vec<Hole> = components(&enclosed, g)
        .into_iter()
        .filter(|c| c.len() as f64 >= min_area && !c.is_empty())
        .map(|c| describe(&raster, emb, &c, reach))
        .collect();

    // outside cells that a stronger dilation would seal off
    let strong = dilate(&raster.occupied, g, rcfg.open_closing_radius.max(rcfg.closing_radius));
    let strong_out = outside(&strong, g);
    let notch: Vec<bool> = (0..g * g).map(|i| out[i] && !strong[i] && !strong_out[i]).collect();
    let open_anomalies = components(&notch, g)
        .into_iter()
        .filter(|c| c.len() as f64 >= min_area && !c.is_empty())
        .map(|c| describe(&raster, emb, &c, reach))
        .collect();

    Ok(HoleReport { num_holes: holes.len(), holes, open_anomalies })
}

fn tolerance_mask(truth: &HoleGroundTruth, grid: &GridSpec) -> Vec<bool> {
    let mut mask = vec![false; grid.len()];
    let t = OVERLAP_TOLERANCE as isize;
    for &b in &truth.boundary_indices {
        let (r, c) = grid.row_col(b);
        for dr in -t..=t {
            for dc in -t..=t {
                let (rr, cc) = (r as isize + dr, c as isize + dc);
                if rr >= 0 && cc >= 0 && (rr as usize) < grid.rows && (cc as usize) < grid.cols {
                    mask[grid.index(rr as usize, cc as usize)] = true;
                }
            }
        }
    }
    mask
}

fn fraction_near(ids: impl Iterator<Item = usize>, mask: &[bool]) -> f64 {
    let (mut hit, mut total) = (0usize, 0usize);
    for id in ids {
        total += 1;
        if mask.get(id).copied().unwrap_or(false) {
            hit += 1;
        }
    }
    if total == 0 {
        0.0
    } else {
        hit as f64 / total as f64
    }
}

/// Fraction of detected boundary samples within two grid cells
/// (Chebyshev) of a true CH boundary sample.
pub fn boundary_overlap(report: &HoleReport, truth: Option<&HoleGroundTruth>, grid: &GridSpec) -> Result<f64> {
    let truth = truth.ok_or_else(|| Error::MissingGroundTruth("boundary overlap needs CH ground truth".into()))?;
    Ok(fraction_near(report.boundary_ids(), &tolerance_mask(truth, grid)))
}

/// For every detected hole, the index of the true CH component (as listed by
/// [`HoleGroundTruth::components`]) whose boundary it overlaps most, if any.
pub fn attribute_holes(report: &HoleReport, truth: &HoleGroundTruth, grid: &GridSpec) -> Vec<Option<usize>> {
    let masks: Vec<Vec<bool>> = truth.components(grid).iter().map(|c| tolerance_mask(c, grid)).collect();
    report
        .holes
        .iter()
        .map(|hole| {
            let mut best: Option<(usize, usize)> = None;
            for (ci, mask) in masks.iter().enumerate() {
                let hits = hole.boundary_sample_ids.iter().filter(|&&id| mask.get(id).copied().unwrap_or(false)).count();
                if hits > 0 && best.is_none_or(|(_, h)| hits > h) {
                    best = Some((ci, hits));
                }
            }
            best.map(|(ci, _)| ci)
        })
        .collect()
}
