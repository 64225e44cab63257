//! Embedding quality (per-point trustworthiness) and raster-based detection
//! of enclosed voids in 2D embeddings.

mod raster;
mod trust;

pub use raster::{attribute_holes, boundary_overlap, detect_holes, Hole, HoleReport, RasterConfig};
pub use trust::{trustworthiness, trustworthiness_with, InputRanks, TrustworthinessReport};
