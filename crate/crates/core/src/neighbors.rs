//! Fuzzy neighborhood graph: exact Euclidean kNN, per-point connectivity
//! scales, exponential membership weights and probabilistic-union symmetrization.

use std::cmp::Ordering;
use std::io::Write;

use ndarray::Array2;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::features::FeatureMatrix;

const QUERY_BLOCK: usize = 16;

pub const SIGMA_LOWER: f64 = 1e-6;
pub const SIGMA_UPPER: f64 = 1e3;
pub const SIGMA_ITERATIONS: usize = 64;

#[derive(Debug, Clone, PartialEq)]
pub struct KnnResult {
    /// Row-local neighbor indices, `M' x n`, nearest first.
    pub neighbor_ids: Array2<usize>,
    pub distances: Array2<f64>,
    /// Dataset sample id of every row.
    pub index_map: Vec<usize>,
}

impl KnnResult {
    pub fn k(&self) -> usize {
        self.neighbor_ids.ncols()
    }

    pub fn len(&self) -> usize {
        self.neighbor_ids.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Orders `(distance, index)` pairs: by distance, ties to the lower index.
pub(crate) fn by_distance_then_index(a: &(f64, usize), b: &(f64, usize)) -> Ordering {
    a.0.total_cmp(&b.0).then(a.1.cmp(&b.1))
}

/// Keeps the `k` smallest pairs, sorted.
pub(crate) fn select_smallest(mut pairs: Vec<(f64, usize)>, k: usize) -> Vec<(f64, usize)> {
    if k < pairs.len() {
        pairs.select_nth_unstable_by(k, by_distance_then_index);
        pairs.truncate(k);
    }
    pairs.sort_unstable_by(by_distance_then_index);
    pairs
}

/// Squared Euclidean distance with independent partial sums, so the
/// loop vectorizes; summation order is fixed, results are deterministic.
pub fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    const LANES: usize = 8;
    let mut acc = [0.0f64; LANES];
    let chunks = a.len() / LANES * LANES;
    for (ca, cb) in a[..chunks].chunks_exact(LANES).zip(b[..chunks].chunks_exact(LANES)) {
        for l in 0..LANES {
            let d = ca[l] - cb[l];
            acc[l] += d * d;
        }
    }
    let mut tail = 0.0;
    for (x, y) in a[chunks..].iter().zip(&b[chunks..]) {
        tail += (x - y) * (x - y);
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

/// Exact Euclidean `n`-nearest neighbors of every row, self excluded.
pub fn knn_exact(features: &FeatureMatrix, n: usize) -> Result<KnnResult> {
    let rows = features.nrows();
    if n == 0 || n >= rows {
        return Err(Error::domain(format!("neighborhood size {n} must be in 1..{rows}")));
    }
    let x = features.values.as_standard_layout();
    let row = |i: usize| x.row(i).to_slice().expect("standard layout");
    let blocks: Vec<Vec<Vec<(f64, usize)>>> = (0..rows)
        .into_par_iter()
        .step_by(QUERY_BLOCK)
        .map(|start| {
            let end = (start + QUERY_BLOCK).min(rows);
            let mut dist = vec![Vec::with_capacity(rows - 1); end - start];
            for j in 0..rows {
                let target = row(j);
                for (slot, i) in (start..end).enumerate() {
                    if i == j {
                        continue;
                    }
                    dist[slot].push((squared_distance(row(i), target).sqrt(), j));
                }
            }
            dist.into_iter().map(|d| select_smallest(d, n)).collect()
        })
        .collect();

    let mut neighbor_ids = Array2::zeros((rows, n));
    let mut distances = Array2::zeros((rows, n));
    for (i, nearest) in blocks.into_iter().flatten().enumerate() {
        for (j, (d, id)) in nearest.into_iter().enumerate() {
            neighbor_ids[[i, j]] = id;
            distances[[i, j]] = d;
        }
    }
    Ok(KnnResult { neighbor_ids, distances, index_map: features.index_map.clone() })
}

#[derive(Debug, Clone, PartialEq)]
pub struct FuzzyNeighborhood {
    /// Distance to the nearest strictly distinct neighbor.
    pub rho: Vec<f64>,
    /// Bandwidth making each row's weights sum to `log2(n)`.
    pub sigma: Vec<f64>,
}

/// Sum of the membership weights of one row at bandwidth `sigma`.
pub fn membership_mass(distances: &[f64], rho: f64, sigma: f64) -> f64 {
    distances.iter().map(|&d| (-(d - rho).max(0.0) / sigma).exp()).sum()
}

/// Solves for `sigma` by bisection; returns 1.0 when no distance exceeds `rho`.
pub fn solve_sigma(distances: &[f64], rho: f64, target: f64) -> f64 {
    if distances.iter().all(|&d| d <= rho) {
        return 1.0;
    }
    let (mut lo, mut hi) = (SIGMA_LOWER, SIGMA_UPPER);
    for _ in 0..SIGMA_ITERATIONS {
        let mid = 0.5 * (lo + hi);
        if membership_mass(distances, rho, mid) > target {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    0.5 * (lo + hi)
}

pub fn local_scales(knn: &KnnResult, n: usize) -> Result<FuzzyNeighborhood> {
    let target = (n as f64).log2();
    let mut rho = Vec::with_capacity(knn.len());
    let mut sigma = Vec::with_capacity(knn.len());
    for (i, row) in knn.distances.rows().into_iter().enumerate() {
        let row = row.as_slice().expect("standard layout");
        let r = row
            .iter()
            .copied()
            .find(|&d| d > 0.0)
            .ok_or(Error::DegenerateRow { sample_id: knn.index_map.get(i).copied().unwrap_or(i) })?;
        rho.push(r);
        sigma.push(solve_sigma(row, r, target));
    }
    Ok(FuzzyNeighborhood { rho, sigma })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Edge {
    pub source: usize,
    pub target: usize,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NeighborGraph {
    /// Sorted by `(source, target)`; a symmetric graph lists both directions.
    pub edges: Vec<Edge>,
    pub num_vertices: usize,
    pub symmetric: bool,
}

impl NeighborGraph {
    pub fn weight(&self, source: usize, target: usize) -> Option<f64> {
        self.edges
            .binary_search_by(|e| (e.source, e.target).cmp(&(source, target)))
            .ok()
            .map(|k| self.edges[k].weight)
    }

    /// Builds a symmetric graph from undirected `(i, j, w)` triples.
    pub fn from_undirected(num_vertices: usize, triples: &[(usize, usize, f64)]) -> Self {
        let mut edges: Vec<Edge> = triples
            .iter()
            .filter(|t| t.0 != t.1)
            .flat_map(|&(i, j, w)| [Edge { source: i, target: j, weight: w }, Edge { source: j, target: i, weight: w }])
            .collect();
        edges.sort_by_key(|e| (e.source, e.target));
        edges.dedup_by_key(|e| (e.source, e.target));
        NeighborGraph { edges, num_vertices, symmetric: true }
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "i,j,weight")?;
        for e in &self.edges {
            writeln!(w, "{},{},{}", e.source, e.target, e.weight)?;
        }
        Ok(())
    }
}

/// Directed membership weights `exp(-max(0, d - rho) / sigma)`.
pub fn fuzzy_weights(knn: &KnnResult, scales: &FuzzyNeighborhood) -> NeighborGraph {
    let mut edges = Vec::with_capacity(knn.len() * knn.k());
    for i in 0..knn.len() {
        for j in 0..knn.k() {
            let target = knn.neighbor_ids[[i, j]];
            let d = knn.distances[[i, j]];
            let weight = (-(d - scales.rho[i]).max(0.0) / scales.sigma[i]).exp();
            if weight > 0.0 {
                edges.push(Edge { source: i, target, weight });
            }
        }
    }
    edges.sort_by_key(|e| (e.source, e.target));
    NeighborGraph { edges, num_vertices: knn.len(), symmetric: false }
}

/// Probabilistic t-conorm of the two directed weights.
pub fn fuzzy_union(a: f64, b: f64) -> f64 {
    a + b - a * b
}

/// Symmetrizes by fuzzy union; an already symmetric graph is returned as is.
pub fn symmetrize(g: &NeighborGraph) -> NeighborGraph {
    if g.symmetric {
        return g.clone();
    }
    // (lo, hi) -> weight in each direction
    let mut pairs: Vec<(usize, usize, f64, f64)> = g
        .edges
        .iter()
        .filter(|e| e.source != e.target)
        .map(|e| {
            if e.source < e.target {
                (e.source, e.target, e.weight, 0.0)
            } else {
                (e.target, e.source, 0.0, e.weight)
            }
        })
        .collect();
    pairs.sort_by_key(|p| (p.0, p.1));
    let mut merged: Vec<(usize, usize, f64, f64)> = Vec::with_capacity(pairs.len());
    for p in pairs {
        match merged.last_mut() {
            Some(last) if last.0 == p.0 && last.1 == p.1 => {
                last.2 = last.2.max(p.2);
                last.3 = last.3.max(p.3);
            }
            _ => merged.push(p),
        }
    }
    let mut edges = Vec::with_capacity(2 * merged.len());
    for (i, j, a, b) in merged {
        let w = fuzzy_union(a, b);
        if w > 0.0 {
            edges.push(Edge { source: i, target: j, weight: w });
            edges.push(Edge { source: j, target: i, weight: w });
        }
    }
    edges.sort_by_key(|e| (e.source, e.target));
    NeighborGraph { edges, num_vertices: g.num_vertices, symmetric: true }
}

/// kNN, scales, weights and symmetrization in one call.
pub fn fuzzy_graph(features: &FeatureMatrix, n: usize) -> Result<(KnnResult, FuzzyNeighborhood, NeighborGraph)> {
    let knn = knn_exact(features, n)?;
    let scales = local_scales(&knn, n)?;
    let graph = symmetrize(&fuzzy_weights(&knn, &scales));
    Ok((knn, scales, graph))
}
