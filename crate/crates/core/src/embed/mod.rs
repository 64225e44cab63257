//! Low-dimensional embeddings: UMAP layout optimization plus PCA and
//! spectral-embedding baselines.

mod ab;
mod layout;
mod pca;
mod spectral;

use std::io::{BufRead, Write};

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FeatureMatrix;
use crate::neighbors::{fuzzy_graph, NeighborGraph};

pub use ab::{fit_ab, fit_ab_with, target_curve, AB_SAMPLES, AB_SPAN};
pub use layout::{
    cross_entropy, cross_entropy_gradient, optimize_layout, optimize_layout_with, output_similarity,
    repulsion_pairs, W_OUT_CLAMP,
};
pub use pca::{pca, pca_model, PcaModel};
pub use spectral::{normalized_laplacian_spectrum, spectral_layout, SPECTRAL_EXTENT};

/// Parameters of the output similarity `(1 + a d^(2b))^-1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LayoutParams {
    pub a: f64,
    pub b: f64,
}

impl LayoutParams {
    /// Output-space similarity at distance `x`.
    pub fn curve(&self, x: f64) -> f64 {
        1.0 / (1.0 + self.a * x.powf(2.0 * self.b))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitStrategy {
    #[default]
    Spectral,
    Random,
}

fn default_dim() -> usize {
    2
}
fn default_n() -> usize {
    15
}
fn default_d_min() -> f64 {
    0.1
}
fn default_epochs() -> usize {
    500
}
fn default_learning_rate() -> f64 {
    1.0
}
fn default_neg_samples() -> usize {
    5
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UmapConfig {
    #[serde(default = "default_dim")]
    pub dim: usize,
    /// Neighborhood size.
    #[serde(default = "default_n")]
    pub n: usize,
    #[serde(default = "default_d_min")]
    pub d_min: f64,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_learning_rate")]
    pub learning_rate: f64,
    #[serde(default = "default_neg_samples")]
    pub neg_samples: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub init: InitStrategy,
    /// Lock-free parallel epochs; results are then not bitwise reproducible.
    #[serde(default)]
    pub parallel: bool,
}

impl Default for UmapConfig {
    fn default() -> Self {
        Self {
            dim: default_dim(),
            n: default_n(),
            d_min: default_d_min(),
            epochs: default_epochs(),
            learning_rate: default_learning_rate(),
            neg_samples: default_neg_samples(),
            seed: 0,
            init: InitStrategy::Spectral,
            parallel: false,
        }
    }
}

impl UmapConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::domain("embedding dimension must be at least 1"));
        }
        if self.n < 2 {
            return Err(Error::domain(format!("neighborhood size n must be at least 2, got {}", self.n)));
        }
        if !(self.d_min >= 0.0 && self.d_min.is_finite()) {
            return Err(Error::domain(format!("d_min must be finite and >= 0, got {}", self.d_min)));
        }
        if self.epochs == 0 {
            return Err(Error::domain("at least one epoch is required"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::domain("learning rate must be positive"));
        }
        Ok(())
    }
}

/// Output coordinates, one row per surviving sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    pub coords: Array2<f64>,
    pub index_map: Vec<usize>,
}

impl Embedding {
    pub fn new(coords: Array2<f64>, index_map: Vec<usize>) -> Result<Self> {
        if coords.nrows() != index_map.len() {
            return Err(Error::domain("embedding rows and index map differ in length"));
        }
        if !coords.iter().all(|v| v.is_finite()) {
            return Err(Error::domain("embedding has non-finite coordinates"));
        }
        Ok(Self { coords, index_map })
    }

    pub fn len(&self) -> usize {
        self.coords.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.coords.ncols()
    }

    fn header(dim: usize) -> String {
        let names: Vec<String> = match dim {
            1 => vec!["x".into()],
            2 => vec!["x".into(), "y".into()],
            3 => vec!["x".into(), "y".into(), "z".into()],
            _ => (0..dim).map(|d| format!("x{d}")).collect(),
        };
        format!("sample_id,{}", names.join(","))
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "{}", Self::header(self.dim()))?;
        for (row, id) in self.coords.rows().into_iter().zip(&self.index_map) {
            write!(w, "{id}")?;
            for v in row {
                write!(w, ",{v}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = r.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Format("empty embedding CSV".into()))?
            .map_err(|e| Error::Format(e.to_string()))?;
        let dim = header.split(',').count().saturating_sub(1);
        if dim == 0 || !header.starts_with("sample_id,") {
            return Err(Error::Format(format!("unexpected embedding header {header:?}")));
        }
        let mut ids = Vec::new();
        let mut flat = Vec::new();
        for (lineno, line) in lines.enumerate() {
            let line = line.map_err(|e| Error::Format(e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            let mut fields = line.split(',');
            let bad = || Error::Format(format!("malformed embedding row {}", lineno + 2));
            ids.push(fields.next().ok_or_else(bad)?.trim().parse::<usize>().map_err(|_| bad())?);
            let before = flat.len();
            for f in fields {
                flat.push(f.trim().parse::<f64>().map_err(|_| bad())?);
            }
            if flat.len() - before != dim {
                return Err(bad());
            }
        }
        let coords = Array2::from_shape_vec((ids.len(), dim), flat).expect("row widths checked");
        Embedding::new(coords, ids)
    }
}

/// Uniform random initialization in `[-10, 10]^dim`.
pub fn random_layout(num_vertices: usize, dim: usize, seed: u64) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Array2::from_shape_fn((num_vertices, dim), |_| rng.random_range(-SPECTRAL_EXTENT..SPECTRAL_EXTENT))
}

/// Result of a full UMAP run.
#[derive(Debug, Clone)]
pub struct UmapOutput {
    pub embedding: Embedding,
    pub graph: NeighborGraph,
    pub params: LayoutParams,
}

/// Fits `(a, b)`, builds the fuzzy graph, initializes and optimizes the layout.
pub fn umap(features: &FeatureMatrix, cfg: &UmapConfig) -> Result<UmapOutput> {
    cfg.validate()?;
    let (_, _, graph) = fuzzy_graph(features, cfg.n)?;
    umap_from_graph(graph, features.index_map.clone(), cfg)
}

/// UMAP layout stage on a prebuilt symmetric graph.
pub fn umap_from_graph(graph: NeighborGraph, index_map: Vec<usize>, cfg: &UmapConfig) -> Result<UmapOutput> {
    cfg.validate()?;
    let params = fit_ab(cfg.d_min)?;
    let init = match cfg.init {
        InitStrategy::Spectral => spectral_layout(&graph, cfg.dim)?.coords,
        InitStrategy::Random => random_layout(graph.num_vertices, cfg.dim, cfg.seed ^ 0xA5A5),
    };
    let init = Embedding::new(init, index_map)?;
    let embedding = optimize_layout_with(&graph, &init, cfg, params)?;
    Ok(UmapOutput { embedding, graph, params })
}
