use std::collections::BTreeSet;
use std::sync::atomic::{AtomicU64, Ordering};

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{fit_ab, Embedding, LayoutParams, UmapConfig};
use crate::error::{Error, Result};
use crate::neighbors::NeighborGraph;

/// Output similarities are clamped to `[W_OUT_CLAMP, 1 - W_OUT_CLAMP]`.
pub const W_OUT_CLAMP: f64 = 1e-12;

const REPULSION_EPS: f64 = 1e-3;
const GRAD_CLIP: f64 = 4.0;
const SAMPLED_PAIRS_PER_VERTEX: usize = 5;
const OBJECTIVE_SEED: u64 = 0x0b1e_c71e;

/// `(1 + a s^b)^-1` for squared distance `s`.
pub fn output_similarity(p: LayoutParams, dist_sq: f64) -> f64 {
    1.0 / (1.0 + p.a * dist_sq.powf(p.b))
}

/// Fixed set of non-edge pairs `(i, j)`, `i < j`, for the repulsive term:
/// a few seeded draws per vertex, comparable to the negative-sampling rate.
pub fn repulsion_pairs(g: &NeighborGraph, seed: u64) -> Vec<(usize, usize)> {
    let n = g.num_vertices;
    let is_edge = |i: usize, j: usize| g.weight(i, j).is_some() || g.weight(j, i).is_some();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut set = BTreeSet::new();
    for i in 0..n {
        for _ in 0..SAMPLED_PAIRS_PER_VERTEX {
            let j = rng.random_range(0..n);
            if j != i && !is_edge(i, j) {
                set.insert((i.min(j), i.max(j)));
            }
        }
    }
    set.into_iter().collect()
}

fn pair_terms(g: &NeighborGraph) -> Vec<(usize, usize, f64)> {
    let mut terms: Vec<(usize, usize, f64)> = g
        .edges
        .iter()
        .filter(|e| e.source < e.target || (!g.symmetric && e.source != e.target))
        .map(|e| (e.source, e.target, e.weight))
        .collect();
    terms.extend(repulsion_pairs(g, OBJECTIVE_SEED).into_iter().map(|(i, j)| (i, j, 0.0)));
    terms
}

fn dist_sq(emb: &Array2<f64>, i: usize, j: usize) -> f64 {
    emb.row(i).iter().zip(emb.row(j)).map(|(a, b)| (a - b) * (a - b)).sum()
}

fn clamped(w: f64) -> f64 {
    w.clamp(W_OUT_CLAMP, 1.0 - W_OUT_CLAMP)
}

/// Fuzzy-set cross entropy between input weights and output similarities,
/// over graph edges plus a fixed sample of non-edges.
pub fn cross_entropy(g: &NeighborGraph, emb: &Embedding, p: LayoutParams) -> f64 {
    pair_terms(g)
        .into_iter()
        .map(|(i, j, w)| {
            let wo = clamped(output_similarity(p, dist_sq(&emb.coords, i, j)));
            let mut t = 0.0;
            if w > 0.0 {
                t -= w * wo.ln();
            }
            if w < 1.0 {
                t -= (1.0 - w) * (1.0 - wo).ln();
            }
            t
        })
        .sum()
}

/// Analytic gradient of [`cross_entropy`] with respect to the coordinates.
pub fn cross_entropy_gradient(g: &NeighborGraph, emb: &Embedding, p: LayoutParams) -> Array2<f64> {
    let mut grad = Array2::<f64>::zeros(emb.coords.raw_dim());
    for (i, j, w) in pair_terms(g) {
        let s = dist_sq(&emb.coords, i, j);
        let wo = output_similarity(p, s);
        if !(W_OUT_CLAMP..=1.0 - W_OUT_CLAMP).contains(&wo) || s == 0.0 {
            continue;
        }
        let d_ds = w * p.a * p.b * s.powf(p.b - 1.0) * wo - (1.0 - w) * p.b * wo / s;
        for d in 0..emb.dim() {
            let delta = emb.coords[(i, d)] - emb.coords[(j, d)];
            grad[(i, d)] += 2.0 * delta * d_ds;
            grad[(j, d)] -= 2.0 * delta * d_ds;
        }
    }
    grad
}

/// Optimizes with `(a, b)` fitted from `cfg.d_min`.
pub fn optimize_layout(g: &NeighborGraph, init: &Embedding, cfg: &UmapConfig) -> Result<Embedding> {
    let params = fit_ab(cfg.d_min)?;
    optimize_layout_with(g, init, cfg, params)
}

struct Schedule {
    heads: Vec<usize>,
    tails: Vec<usize>,
    epochs_per_sample: Vec<f64>,
    /// Per-vertex neighbor lists sorted by target, for weight lookup.
    adjacency: Vec<Vec<(usize, f64)>>,
}

impl Schedule {
    fn new(g: &NeighborGraph, epochs: usize) -> Self {
        let wmax = g.edges.iter().map(|e| e.weight).fold(0.0, f64::max);
        let mut adjacency = vec![Vec::new(); g.num_vertices];
        for e in &g.edges {
            adjacency[e.source].push((e.target, e.weight));
        }
        adjacency.iter_mut().for_each(|a| a.sort_by_key(|&(t, _)| t));
        let mut s = Schedule { heads: vec![], tails: vec![], epochs_per_sample: vec![], adjacency };
        for e in &g.edges {
            if e.source == e.target || e.weight <= 0.0 {
                continue;
            }
            let eps = wmax / e.weight;
            // edges that would fire less than once are dropped
            if eps > epochs as f64 {
                continue;
            }
            s.heads.push(e.source);
            s.tails.push(e.target);
            s.epochs_per_sample.push(eps);
        }
        s
    }

    /// Repulsion weight `1 - w_jk` of a negative sample.
    fn repulsion_weight(&self, j: usize, k: usize) -> f64 {
        let row = &self.adjacency[j];
        match row.binary_search_by_key(&k, |&(t, _)| t) {
            Ok(pos) => 1.0 - row[pos].1,
            Err(_) => 1.0,
        }
    }
}

#[inline]
fn clip(v: f64) -> f64 {
    v.clamp(-GRAD_CLIP, GRAD_CLIP)
}

#[inline]
fn attraction(p: LayoutParams, d2: f64) -> f64 {
    if d2 > 0.0 {
        let pb = d2.powf(p.b);
        -2.0 * p.a * p.b * (pb / d2) / (p.a * pb + 1.0)
    } else {
        0.0
    }
}

#[inline]
fn repulsion(p: LayoutParams, d2: f64) -> f64 {
    if d2 > 0.0 {
        2.0 * p.b / ((REPULSION_EPS + d2) * (1.0 + p.a * d2.powf(p.b)))
    } else {
        0.0
    }
}

/// Stochastic gradient descent on the fuzzy cross entropy with
/// per-edge sampling and uniform negative sampling. A negative sample
/// that is itself a neighbor is repelled with weight `1 - w`.
pub fn optimize_layout_with(g: &NeighborGraph, init: &Embedding, cfg: &UmapConfig, p: LayoutParams) -> Result<Embedding> {
    cfg.validate()?;
    if !g.symmetric {
        return Err(Error::domain("layout optimization needs a symmetric graph"));
    }
    if init.len() != g.num_vertices {
        return Err(Error::domain(format!(
            "init has {} rows but the graph has {} vertices",
            init.len(),
            g.num_vertices
        )));
    }
    if init.dim() != cfg.dim {
        return Err(Error::domain(format!("init has dimension {}, expected {}", init.dim(), cfg.dim)));
    }
    let schedule = Schedule::new(g, cfg.epochs);
    let coords = if cfg.parallel {
        run_parallel(&schedule, init, cfg, p)
    } else {
        run_serial(&schedule, init, cfg, p)
    };
    Embedding::new(coords, init.index_map.clone())
}

fn run_serial(s: &Schedule, init: &Embedding, cfg: &UmapConfig, p: LayoutParams) -> Array2<f64> {
    let n = init.len();
    let dim = cfg.dim;
    let mut y: Vec<f64> = init.coords.iter().copied().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let neg_rate = cfg.neg_samples as f64;
    let eps_neg: Vec<f64> = s.epochs_per_sample.iter().map(|e| e / neg_rate).collect();
    let mut next = s.epochs_per_sample.clone();
    let mut next_neg = eps_neg.clone();
    let mut alpha = cfg.learning_rate;
    let mut delta = vec![0.0; dim];

    for epoch in 0..cfg.epochs {
        let now = epoch as f64;
        for e in 0..s.heads.len() {
            if next[e] > now {
                continue;
            }
            let (j, k) = (s.heads[e], s.tails[e]);
            let mut d2 = 0.0;
            for d in 0..dim {
                delta[d] = y[j * dim + d] - y[k * dim + d];
                d2 += delta[d] * delta[d];
            }
            let coeff = attraction(p, d2);
            for d in 0..dim {
                let step = clip(coeff * delta[d]) * alpha;
                y[j * dim + d] += step;
                y[k * dim + d] -= step;
            }
            next[e] += s.epochs_per_sample[e];

            if cfg.neg_samples == 0 {
                continue;
            }
            let draws = ((now - next_neg[e]) / eps_neg[e]).max(0.0) as usize;
            for _ in 0..draws {
                let k = rng.random_range(0..n);
                if k == j {
                    continue;
                }
                let mut d2 = 0.0;
                for d in 0..dim {
                    delta[d] = y[j * dim + d] - y[k * dim + d];
                    d2 += delta[d] * delta[d];
                }
                let coeff = repulsion(p, d2) * s.repulsion_weight(j, k);
                if coeff > 0.0 {
                    for d in 0..dim {
                        y[j * dim + d] += clip(coeff * delta[d]) * alpha;
                    }
                }
            }
            next_neg[e] += draws as f64 * eps_neg[e];
        }
        alpha = cfg.learning_rate * (1.0 - (epoch + 1) as f64 / cfg.epochs as f64);
    }
    Array2::from_shape_vec((n, dim), y).expect("shape preserved")
}

fn run_parallel(s: &Schedule, init: &Embedding, cfg: &UmapConfig, p: LayoutParams) -> Array2<f64> {
    let n = init.len();
    let dim = cfg.dim;
    let y: Vec<AtomicU64> = init.coords.iter().map(|v| AtomicU64::new(v.to_bits())).collect();
    let load = |i: usize| f64::from_bits(y[i].load(Ordering::Relaxed));
    // racy read-modify-write: lost updates are tolerated by design
    let add = |i: usize, v: f64| y[i].store((load(i) + v).to_bits(), Ordering::Relaxed);

    let neg_rate = cfg.neg_samples as f64;
    let eps_neg: Vec<f64> = s.epochs_per_sample.iter().map(|e| e / neg_rate).collect();
    let mut next = s.epochs_per_sample.clone();
    let mut next_neg = eps_neg.clone();
    let mut alpha = cfg.learning_rate;

    for epoch in 0..cfg.epochs {
        let now = epoch as f64;
        next.par_iter_mut()
            .zip(next_neg.par_iter_mut())
            .enumerate()
            .for_each(|(e, (next_e, next_neg_e))| {
                if *next_e > now {
                    return;
                }
                let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ ((epoch as u64) << 32) ^ e as u64);
                let mut delta = vec![0.0; dim];
                let (j, k) = (s.heads[e], s.tails[e]);
                let mut d2 = 0.0;
                for d in 0..dim {
                    delta[d] = load(j * dim + d) - load(k * dim + d);
                    d2 += delta[d] * delta[d];
                }
                let coeff = attraction(p, d2);
                for d in 0..dim {
                    let step = clip(coeff * delta[d]) * alpha;
                    add(j * dim + d, step);
                    add(k * dim + d, -step);
                }
                *next_e += s.epochs_per_sample[e];
                if cfg.neg_samples == 0 {
                    return;
                }
                let draws = ((now - *next_neg_e) / eps_neg[e]).max(0.0) as usize;
                for _ in 0..draws {
                    let k = rng.random_range(0..n);
                    if k == j {
                        continue;
                    }
                    let mut d2 = 0.0;
                    for d in 0..dim {
                        delta[d] = load(j * dim + d) - load(k * dim + d);
                        d2 += delta[d] * delta[d];
                    }
                    let coeff = repulsion(p, d2) * s.repulsion_weight(j, k);
                    if coeff > 0.0 {
                        for d in 0..dim {
                            add(j * dim + d, clip(coeff * delta[d]) * alpha);
                        }
                    }
                }
                *next_neg_e += draws as f64 * eps_neg[e];
            });
        alpha = cfg.learning_rate * (1.0 - (epoch + 1) as f64 / cfg.epochs as f64);
    }
    let flat: Vec<f64> = y.into_iter().map(|a| f64::from_bits(a.into_inner())).collect();
    Array2::from_shape_vec((n, dim), flat).expect("shape preserved")
}
