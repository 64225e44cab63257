use nalgebra::DMatrix;
use ndarray::Array2;

use super::Embedding;
use crate::error::{Error, Result};
use crate::linalg::{dense_eigen_ascending, lanczos_largest, SymmetricOperator};
use crate::neighbors::NeighborGraph;

/// Coordinates of each component are scaled to `[-SPECTRAL_EXTENT, SPECTRAL_EXTENT]`.
pub const SPECTRAL_EXTENT: f64 = 10.0;

const DENSE_LIMIT: usize = 400;
const COMPONENT_SPACING: f64 = 2.5 * SPECTRAL_EXTENT;

struct Adjacency {
    neighbors: Vec<Vec<(usize, f64)>>,
}

impl Adjacency {
    fn new(g: &NeighborGraph) -> Self {
        let mut neighbors = vec![Vec::new(); g.num_vertices];
        for e in &g.edges {
            if e.source != e.target {
                neighbors[e.source].push((e.target, e.weight));
            }
        }
        Self { neighbors }
    }

    fn components(&self) -> Vec<Vec<usize>> {
        let n = self.neighbors.len();
        let mut label = vec![usize::MAX; n];
        let mut out = Vec::new();
        for start in 0..n {
            if label[start] != usize::MAX {
                continue;
            }
            let id = out.len();
            let mut members = vec![start];
            label[start] = id;
            let mut head = 0;
            while head < members.len() {
                let v = members[head];
                head += 1;
                for &(u, _) in &self.neighbors[v] {
                    if label[u] == usize::MAX {
                        label[u] = id;
                        members.push(u);
                    }
                }
            }
            members.sort_unstable();
            out.push(members);
        }
        out
    }
}

/// `D^-1/2 W D^-1/2` restricted to one component, in local indices.
struct NormalizedAdjacency {
    rows: Vec<Vec<(usize, f64)>>,
}

impl NormalizedAdjacency {
    fn new(adj: &Adjacency, members: &[usize]) -> (Self, Vec<f64>) {
        let mut local = std::collections::HashMap::with_capacity(members.len());
        for (i, &v) in members.iter().enumerate() {
            local.insert(v, i);
        }
        let degree: Vec<f64> = members.iter().map(|&v| adj.neighbors[v].iter().map(|&(_, w)| w).sum()).collect();
        let rows = members
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                adj.neighbors[v]
                    .iter()
                    .map(|&(u, w)| {
                        let j = local[&u];
                        (j, w / (degree[i] * degree[j]).sqrt())
                    })
                    .collect()
            })
            .collect();
        (Self { rows }, degree)
    }

    fn dense_laplacian(&self) -> DMatrix<f64> {
        let n = self.rows.len();
        let mut l = DMatrix::<f64>::identity(n, n);
        for (i, row) in self.rows.iter().enumerate() {
            for &(j, w) in row {
                l[(i, j)] -= w;
            }
        }
        l
    }
}

impl SymmetricOperator for NormalizedAdjacency {
    fn dim(&self) -> usize {
        self.rows.len()
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        for (yi, row) in y.iter_mut().zip(&self.rows) {
            *yi = row.iter().map(|&(j, w)| w * x[j]).sum();
        }
    }
}

/// Ascending spectrum of `I - D^-1/2 W D^-1/2` over the whole graph.
pub fn normalized_laplacian_spectrum(g: &NeighborGraph) -> Result<Vec<f64>> {
    let adj = Adjacency::new(g);
    if adj.neighbors.iter().any(|n| n.is_empty()) {
        return Err(Error::domain("isolated vertex has no normalized Laplacian row"));
    }
    let members: Vec<usize> = (0..g.num_vertices).collect();
    let (op, _) = NormalizedAdjacency::new(&adj, &members);
    Ok(dense_eigen_ascending(op.dense_laplacian())?.values)
}

fn component_vectors(op: &NormalizedAdjacency, degree: &[f64], dim: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    let n = op.dim();
    let want = dim.min(n - 1);
    if n <= DENSE_LIMIT {
        let eig = dense_eigen_ascending(op.dense_laplacian())?;
        return Ok(eig.vectors.into_iter().skip(1).take(want).collect());
    }
    // smallest Laplacian eigenvectors = largest of the normalized adjacency
    let mut trivial: Vec<f64> = degree.iter().map(|d| d.sqrt()).collect();
    let norm = trivial.iter().map(|v| v * v).sum::<f64>().sqrt();
    trivial.iter_mut().for_each(|v| *v /= norm);
    Ok(lanczos_largest(op, want, &[trivial], seed)?.vectors)
}

fn orient_and_scale(v: &mut [f64]) {
    let (mut pivot, mut best) = (0, 0.0f64);
    for (i, x) in v.iter().enumerate() {
        if x.abs() > best {
            best = x.abs();
            pivot = i;
        }
    }
    if best == 0.0 {
        return;
    }
    let s = SPECTRAL_EXTENT / best * v[pivot].signum();
    v.iter_mut().for_each(|x| *x *= s);
}

/// Spectral embedding of a symmetric graph; rows follow vertex order.
pub fn spectral_layout(g: &NeighborGraph, dim: usize) -> Result<Embedding> {
    if dim == 0 {
        return Err(Error::domain("embedding dimension must be at least 1"));
    }
    if !g.symmetric {
        return Err(Error::domain("spectral layout needs a symmetric graph"));
    }
    let adj = Adjacency::new(g);
    let components = adj.components();
    let per_row = (components.len() as f64).sqrt().ceil().max(1.0) as usize;
    let mut coords = Array2::<f64>::zeros((g.num_vertices, dim));

    for (c, members) in components.iter().enumerate() {
        let offset = [COMPONENT_SPACING * (c % per_row) as f64, COMPONENT_SPACING * (c / per_row) as f64];
        if members.len() > 1 {
            let (op, degree) = NormalizedAdjacency::new(&adj, members);
            let vectors = component_vectors(&op, &degree, dim, c as u64)?;
            for (d, mut v) in vectors.into_iter().enumerate() {
                orient_and_scale(&mut v);
                for (&vertex, x) in members.iter().zip(v) {
                    coords[(vertex, d)] = x;
                }
            }
        }
        if components.len() > 1 {
            for &vertex in members {
                for (d, off) in offset.iter().enumerate().take(dim) {
                    coords[(vertex, d)] += off;
                }
            }
        }
    }
    Embedding::new(coords, (0..g.num_vertices).collect())
}
