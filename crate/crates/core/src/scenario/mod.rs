//! Service-area grids, synthetic propagation scenes, coverage-hole ground truth
//! and dataset persistence.

mod io;
mod scene;
mod trace;

use std::collections::{BTreeSet, VecDeque};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::channel::{rss_db, rss_from_channel, ArrayConfig, ChannelSample, MultipathComponent, Rss};
use crate::error::{Error, Result};

pub use io::{load_dataset, read_dataset, save_dataset, write_dataset, FORMAT_VERSION, MAGIC};
pub use scene::{generate, ArraySpec, Scene};
pub use trace::trace_paths;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Location {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Location {
    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }
}

/// Uniform x-y grid of UE positions, row-major: sample `r * cols + c` sits at
/// `origin + (c * spacing, r * spacing)` and height `ue_height`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub rows: usize,
    pub cols: usize,
    pub spacing: f64,
    #[serde(default)]
    pub origin: Location,
    #[serde(default)]
    pub ue_height: f64,
}

impl GridSpec {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn validate(&self) -> Result<()> {
        if self.rows == 0 || self.cols == 0 {
            return Err(Error::domain("grid needs at least one row and one column"));
        }
        if !(self.spacing > 0.0 && self.spacing.is_finite()) {
            return Err(Error::domain(format!("grid spacing must be positive, got {}", self.spacing)));
        }
        if !self.origin.is_finite() || !self.ue_height.is_finite() {
            return Err(Error::domain("grid origin and height must be finite"));
        }
        Ok(())
    }

    pub fn row_col(&self, index: usize) -> (usize, usize) {
        (index / self.cols, index % self.cols)
    }

    pub fn index(&self, row: usize, col: usize) -> usize {
        row * self.cols + col
    }

    pub fn location(&self, index: usize) -> Location {
        let (r, c) = self.row_col(index);
        Location::new(
            self.origin.x + c as f64 * self.spacing,
            self.origin.y + r as f64 * self.spacing,
            self.ue_height,
        )
    }

    /// 4-neighborhood of a grid index.
    pub fn neighbors4(&self, index: usize) -> impl Iterator<Item = usize> + '_ {
        let (r, c) = self.row_col(index);
        let r = r as isize;
        let c = c as isize;
        [(r - 1, c), (r + 1, c), (r, c - 1), (r, c + 1)]
            .into_iter()
            .filter(|&(rr, cc)| rr >= 0 && cc >= 0 && (rr as usize) < self.rows && (cc as usize) < self.cols)
            .map(|(rr, cc)| self.index(rr as usize, cc as usize))
    }

    /// Chebyshev distance between two grid indices, in cells.
    pub fn chebyshev(&self, a: usize, b: usize) -> usize {
        let (ra, ca) = self.row_col(a);
        let (rb, cb) = self.row_col(b);
        ra.abs_diff(rb).max(ca.abs_diff(cb))
    }

    /// Rectangle covering the inclusive cell block `rows x cols`, padded by half a cell.
    pub fn cell_rect(&self, rows: std::ops::RangeInclusive<usize>, cols: std::ops::RangeInclusive<usize>) -> Rect {
        let h = 0.5 * self.spacing;
        Rect {
            x: [
                self.origin.x + *cols.start() as f64 * self.spacing - h,
                self.origin.x + *cols.end() as f64 * self.spacing + h,
            ],
            y: [
                self.origin.y + *rows.start() as f64 * self.spacing - h,
                self.origin.y + *rows.end() as f64 * self.spacing + h,
            ],
        }
    }
}

pub fn build_grid(spec: &GridSpec) -> Vec<Location> {
    (0..spec.len()).map(|m| spec.location(m)).collect()
}

/// Axis-aligned rectangle in the x-y plane (closed).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub x: [f64; 2],
    pub y: [f64; 2],
}

impl Rect {
    pub fn new(x0: f64, x1: f64, y0: f64, y1: f64) -> Self {
        Self { x: [x0.min(x1), x0.max(x1)], y: [y0.min(y1), y0.max(y1)] }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.x.iter().chain(self.y.iter()).all(|v| v.is_finite())
            && self.x[1] > self.x[0]
            && self.y[1] > self.y[0];
        if ok {
            Ok(())
        } else {
            Err(Error::domain(format!("degenerate rectangle {self:?}")))
        }
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.x[0] && x <= self.x[1] && y >= self.y[0] && y <= self.y[1]
    }
}

fn default_gamma() -> [f64; 2] {
    [-0.7, 0.0]
}

/// Flat reflecting wall between two points with complex reflection gain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Reflector {
    pub p0: [f64; 2],
    pub p1: [f64; 2],
    /// Reflection coefficient as `[re, im]`; defaults to `0.7 exp(j pi)`.
    #[serde(default = "default_gamma")]
    pub gamma: [f64; 2],
}

impl Reflector {
    pub fn new(p0: [f64; 2], p1: [f64; 2], gamma: Complex64) -> Self {
        Self { p0, p1, gamma: [gamma.re, gamma.im] }
    }

    pub fn gain(&self) -> Complex64 {
        Complex64::new(self.gamma[0], self.gamma[1])
    }

    pub fn validate(&self) -> Result<()> {
        if self.p0 == self.p1 || !self.p0.iter().chain(self.p1.iter()).all(|v| v.is_finite()) {
            return Err(Error::domain(format!("degenerate reflector {self:?}")));
        }
        if self.gain().norm() > 1.0 + 1e-12 {
            return Err(Error::domain(format!("reflection gain {} exceeds unit magnitude", self.gain())));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Geometry {
    pub bs_location: Location,
    #[serde(default)]
    pub blockers: Vec<Rect>,
    #[serde(default)]
    pub reflectors: Vec<Reflector>,
}

impl Geometry {
    pub fn validate(&self) -> Result<()> {
        if !self.bs_location.is_finite() {
            return Err(Error::domain("BS location must be finite"));
        }
        self.blockers.iter().try_for_each(Rect::validate)?;
        self.reflectors.iter().try_for_each(Reflector::validate)
    }
}

/// Ordered channel samples with optional hidden evaluation data.
///
/// Channel entries are held at single precision (stored as `f64`), which is
/// what the on-disk format carries, so persistence round-trips bit-exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub samples: Vec<ChannelSample>,
    pub hidden_locations: Option<Vec<Location>>,
    pub ch_labels: Option<Vec<bool>>,
    /// Multipath parameters per sample, when the generator knows them.
    pub paths: Option<Vec<Vec<MultipathComponent>>>,
    pub array: ArrayConfig,
    pub grid: GridSpec,
}

impl Dataset {
    pub fn new(
        mut samples: Vec<ChannelSample>,
        array: ArrayConfig,
        grid: GridSpec,
    ) -> Result<Self> {
        array.validate()?;
        grid.validate()?;
        if samples.len() != grid.len() {
            return Err(Error::domain(format!(
                "{} samples do not fill a {}x{} grid",
                samples.len(),
                grid.rows,
                grid.cols
            )));
        }
        for (m, s) in samples.iter_mut().enumerate() {
            if s.matrix.dim() != (array.num_antennas, array.num_subcarriers) {
                return Err(Error::domain(format!("sample {m} has shape {:?}", s.matrix.dim())));
            }
            if !s.matrix.iter().all(|z| z.re.is_finite() && z.im.is_finite()) {
                return Err(Error::domain(format!("sample {m} has non-finite entries")));
            }
            s.sample_id = m;
            s.matrix.mapv_inplace(|z| Complex64::new(z.re as f32 as f64, z.im as f32 as f64));
        }
        Ok(Self { samples, hidden_locations: None, ch_labels: None, paths: None, array, grid })
    }

    pub fn with_locations(mut self, locations: Vec<Location>) -> Result<Self> {
        self.check_len(locations.len(), "locations")?;
        self.hidden_locations = Some(locations);
        Ok(self)
    }

    pub fn with_labels(mut self, labels: Vec<bool>) -> Result<Self> {
        self.check_len(labels.len(), "labels")?;
        self.ch_labels = Some(labels);
        Ok(self)
    }

    pub fn with_paths(mut self, paths: Vec<Vec<MultipathComponent>>) -> Result<Self> {
        self.check_len(paths.len(), "path lists")?;
        self.paths = Some(paths);
        Ok(self)
    }

    fn check_len(&self, len: usize, what: &str) -> Result<()> {
        if len != self.samples.len() {
            return Err(Error::domain(format!("{len} {what} for {} samples", self.samples.len())));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn rss(&self, m: usize) -> Rss {
        match &self.paths {
            Some(paths) => rss_db(&paths[m]),
            None => rss_from_channel(&self.samples[m]),
        }
    }

    /// Ground truth reconstructed from the stored CH labels.
    pub fn ground_truth(&self) -> Option<HoleGroundTruth> {
        let labels = self.ch_labels.as_ref()?;
        let ch = labels.iter().enumerate().filter(|(_, &l)| l).map(|(m, _)| m).collect();
        Some(HoleGroundTruth::from_ch(ch, &self.grid))
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct HoleGroundTruth {
    pub ch_indices: BTreeSet<usize>,
    /// Samples outside the CH that are 4-adjacent to it on the grid.
    pub boundary_indices: BTreeSet<usize>,
}

impl HoleGroundTruth {
    pub fn from_ch(ch_indices: BTreeSet<usize>, grid: &GridSpec) -> Self {
        let boundary_indices = ch_indices
            .iter()
            .flat_map(|&m| grid.neighbors4(m).collect::<Vec<_>>())
            .filter(|n| !ch_indices.contains(n))
            .collect();
        Self { ch_indices, boundary_indices }
    }

    /// Splits the CH set into 4-connected grid components, each with its own boundary.
    pub fn components(&self, grid: &GridSpec) -> Vec<HoleGroundTruth> {
        let mut seen = BTreeSet::new();
        let mut out = Vec::new();
        for &start in &self.ch_indices {
            if !seen.insert(start) {
                continue;
            }
            let mut cells = BTreeSet::from([start]);
            let mut queue = VecDeque::from([start]);
            while let Some(m) = queue.pop_front() {
                for n in grid.neighbors4(m) {
                    if self.ch_indices.contains(&n) && seen.insert(n) {
                        cells.insert(n);
                        queue.push_back(n);
                    }
                }
            }
            out.push(HoleGroundTruth::from_ch(cells, grid));
        }
        out
    }

    /// Whether any CH cell sits on the outer edge of the grid.
    pub fn touches_grid_edge(&self, grid: &GridSpec) -> bool {
        self.ch_indices.iter().any(|&m| {
            let (r, c) = grid.row_col(m);
            r == 0 || c == 0 || r + 1 == grid.rows || c + 1 == grid.cols
        })
    }
}

/// Zeroes the channels inside the given regions and reports them as CH ground truth.
pub fn carve_holes(ds: &Dataset, regions: &[Rect]) -> Result<(Dataset, HoleGroundTruth)> {
    regions.iter().try_for_each(Rect::validate)?;
    let mut out = ds.clone();
    let mut carved = BTreeSet::new();
    if !regions.is_empty() {
        let locations: Vec<Location> = match &ds.hidden_locations {
            Some(l) => l.clone(),
            None => build_grid(&ds.grid),
        };
        for (m, loc) in locations.iter().enumerate() {
            if regions.iter().any(|r| r.contains(loc.x, loc.y)) {
                carved.insert(m);
                out.samples[m] = ChannelSample::zeros(&ds.array, m);
                if let Some(paths) = out.paths.as_mut() {
                    paths[m].clear();
                }
            }
        }
        if let Some(labels) = out.ch_labels.as_mut() {
            for &m in &carved {
                labels[m] = true;
            }
        }
    }
    let truth = HoleGroundTruth::from_ch(carved, &ds.grid);
    Ok((out, truth))
}

/// CH set of all samples whose RSS is strictly below `rss0` (dB).
pub fn classify_coverage(ds: &Dataset, rss0: f64) -> HoleGroundTruth {
    let ch = (0..ds.len()).filter(|&m| ds.rss(m).below(rss0)).collect();
    HoleGroundTruth::from_ch(ch, &ds.grid)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::synth_channel;

    fn grid(rows: usize, cols: usize) -> GridSpec {
        GridSpec { rows, cols, spacing: 0.2, origin: Location::default(), ue_height: 1.5 }
    }

    fn flat_dataset(g: GridSpec) -> Dataset {
        let array = ArrayConfig { num_antennas: 4, num_subcarriers: 4, ..ArrayConfig::default() };
        let paths: Vec<Vec<MultipathComponent>> = (0..g.len())
            .map(|m| vec![MultipathComponent::new(Complex64::new(1e-3 * (1.0 + m as f64), 0.0), 1.0, 1e-9)])
            .collect();
        let samples = paths.iter().map(|p| synth_channel(p, &array).unwrap()).collect();
        Dataset::new(samples, array, g)
            .unwrap()
            .with_locations(build_grid(&g))
            .unwrap()
            .with_paths(paths)
            .unwrap()
    }

    #[test]
    fn grid_shapes() {
        let g = grid(1, 1);
        assert_eq!(build_grid(&g), vec![Location::new(0.0, 0.0, 1.5)]);
        assert_eq!(build_grid(&grid(100, 181)).len(), 18_100);
        let pts = build_grid(&grid(2, 2));
        assert!((pts[1].x - pts[0].x - 0.2).abs() < 1e-15);
        assert!((pts[2].y - pts[0].y - 0.2).abs() < 1e-15);
        assert_eq!(pts[3], Location::new(0.2, 0.2, 1.5));
    }

    #[test]
    fn carve_nothing_is_identity() {
        let ds = flat_dataset(grid(4, 4));
        let (out, truth) = carve_holes(&ds, &[]).unwrap();
        assert_eq!(out, ds);
        assert!(truth.ch_indices.is_empty());
        assert!(truth.boundary_indices.is_empty());
    }

    #[test]
    fn carve_single_interior_cell() {
        let g = grid(5, 5);
        let ds = flat_dataset(g);
        let (out, truth) = carve_holes(&ds, &[g.cell_rect(2..=2, 2..=2)]).unwrap();
        assert_eq!(truth.ch_indices, BTreeSet::from([12]));
        assert_eq!(truth.boundary_indices, BTreeSet::from([7, 11, 13, 17]));
        assert!(out.samples[12].is_zero());
        assert!(out.paths.as_ref().unwrap()[12].is_empty());
        assert!(!out.samples[11].is_zero());
    }

    #[test]
    fn carved_regions_split_into_components() {
        let g = grid(20, 20);
        let ds = flat_dataset(g);
        let regions = [
            g.cell_rect(2..=4, 2..=4),
            g.cell_rect(10..=12, 3..=6),
            g.cell_rect(6..=15, 12..=14),
        ];
        let (_, truth) = carve_holes(&ds, &regions).unwrap();
        let comps = truth.components(&g);
        assert_eq!(comps.len(), 3);
        let sizes: Vec<usize> = comps.iter().map(|c| c.ch_indices.len()).collect();
        assert_eq!(sizes.iter().sum::<usize>(), 9 + 12 + 30);
        assert!(truth.boundary_indices.is_disjoint(&truth.ch_indices));
    }

    #[test]
    fn coverage_classification() {
        let g = grid(3, 3);
        let ds = flat_dataset(g);
        assert!(classify_coverage(&ds, -100.0).ch_indices.is_empty());
        let (carved, _) = carve_holes(&ds, &[g.cell_rect(0..=0, 0..=1)]).unwrap();
        let truth = classify_coverage(&carved, -1e6);
        assert_eq!(truth.ch_indices, BTreeSet::from([0, 1]));
        assert!(classify_coverage(&carved, f64::NEG_INFINITY).ch_indices.is_empty());
        // rss rises with index here: -60 dB is 1e-6 power, i.e. |alpha| = 1e-3 exactly
        let low = classify_coverage(&ds, -50.0);
        assert!(low.ch_indices.contains(&0));
    }

    #[test]
    fn dataset_quantizes_to_single_precision() {
        let ds = flat_dataset(grid(2, 2));
        for s in &ds.samples {
            for z in s.matrix.iter() {
                assert_eq!(z.re, z.re as f32 as f64);
            }
        }
    }
}
