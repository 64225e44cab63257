use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{build_grid, carve_holes, classify_coverage, trace_paths, Dataset, Geometry, GridSpec, HoleGroundTruth, Location, Rect, Reflector};
use crate::channel::{add_noise, synth_channel, ArrayConfig};
use crate::error::{Error, Result};

fn default_subcarriers() -> usize {
    64
}

/// Array block of a scene file.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArraySpec {
    pub n: usize,
    pub fc_hz: f64,
    pub w_hz: f64,
    #[serde(default = "default_subcarriers")]
    pub f: usize,
}

impl From<ArraySpec> for ArrayConfig {
    fn from(a: ArraySpec) -> Self {
        ArrayConfig { num_antennas: a.n, carrier_frequency: a.fc_hz, bandwidth: a.w_hz, num_subcarriers: a.f }
    }
}

/// Scenario description as read from JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub grid: GridSpec,
    pub bs: Location,
    #[serde(default)]
    pub blockers: Vec<Rect>,
    #[serde(default)]
    pub reflectors: Vec<Reflector>,
    #[serde(default)]
    pub carve_regions: Vec<Rect>,
    /// CH threshold in dB; `null` keeps only the carved regions as CH.
    #[serde(default)]
    pub rss0_db: Option<f64>,
    pub array: ArraySpec,
    /// Per-entry SNR of the stored channel estimates; absent means noiseless.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub snr_db: Option<f64>,
}

impl Scene {
    pub fn geometry(&self) -> Geometry {
        Geometry { bs_location: self.bs, blockers: self.blockers.clone(), reflectors: self.reflectors.clone() }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

fn mix_seed(seed: u64, index: u64) -> u64 {
    // splitmix64 finalizer
    let mut z = seed ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Traces every grid point, synthesizes channels, carves holes and labels coverage.
pub fn generate(scene: &Scene, seed: u64) -> Result<(Dataset, HoleGroundTruth)> {
    let array: ArrayConfig = scene.array.into();
    array.validate()?;
    scene.grid.validate()?;
    let geo = scene.geometry();
    geo.validate()?;
    let locations = build_grid(&scene.grid);

    let traced: Vec<_> = locations
        .par_iter()
        .enumerate()
        .map(|(m, loc)| {
            let paths = trace_paths(loc, &geo, &array)?;
            let mut h = synth_channel(&paths, &array)?;
            h.sample_id = m;
            if let Some(snr) = scene.snr_db {
                if !h.is_zero() {
                    h = add_noise(&h, snr, mix_seed(seed, m as u64))?;
                }
            }
            Ok((h, paths))
        })
        .collect::<Result<Vec<_>>>()?;
    let (samples, paths): (Vec<_>, Vec<_>) = traced.into_iter().unzip();

    let ds = Dataset::new(samples, array, scene.grid)?
        .with_locations(locations)?
        .with_paths(paths)?;
    let (carved, carved_truth) = carve_holes(&ds, &scene.carve_regions)?;
    let mut labels = vec![false; carved.len()];
    for &m in &carved_truth.ch_indices {
        labels[m] = true;
    }
    if let Some(rss0) = scene.rss0_db {
        if rss0.is_nan() {
            return Err(Error::Config("rss0_db must not be NaN".into()));
        }
        for m in classify_coverage(&carved, rss0).ch_indices {
            labels[m] = true;
        }
    }
    let mut ds = carved.with_labels(labels)?;
    if scene.snr_db.is_some() {
        // noisy estimates must be featurized from the stored channels
        ds.paths = None;
    }
    let truth = ds.ground_truth().expect("labels just attached");
    Ok((ds, truth))
}
