use ndarray::ArrayView1;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::embed::Embedding;
use crate::error::{Error, Result};
use crate::features::FeatureMatrix;
use crate::neighbors::{by_distance_then_index, squared_distance};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrustworthinessReport {
    pub per_point: Vec<f64>,
    pub t_min: f64,
    pub k: usize,
}

impl TrustworthinessReport {
    pub fn mean(&self) -> f64 {
        self.per_point.iter().sum::<f64>() / self.per_point.len() as f64
    }
}

fn sq_dist(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

const QUERY_BLOCK: usize = 16;

/// Input-space rank table: `rank(i, j)` is the 1-based position of `j`
/// among the neighbors of `i` (self excluded, ties to lower index).
#[derive(Debug, Clone)]
pub struct InputRanks {
    ranks: Vec<u32>,
    len: usize,
}

impl InputRanks {
    pub fn new(features: &FeatureMatrix) -> Self {
        let len = features.nrows();
        let x = features.values.as_standard_layout().into_owned();
        let row = |j: usize| x.row(j).to_slice().expect("standard layout");
        let mut ranks = vec![0u32; len * len];
        // blocks of queries share each pass over the data rows
        ranks.par_chunks_mut((len * QUERY_BLOCK).max(1)).enumerate().for_each(|(b, block)| {
            let start = b * QUERY_BLOCK;
            let count = block.len() / len;
            let mut pairs = vec![Vec::with_capacity(len); count];
            for j in 0..len {
                let target = row(j);
                for (slot, list) in pairs.iter_mut().enumerate() {
                    let i = start + slot;
                    if i != j {
                        list.push((squared_distance(row(i), target), j));
                    }
                }
            }
            for (slot, mut list) in pairs.into_iter().enumerate() {
                list.sort_unstable_by(by_distance_then_index);
                let out = &mut block[slot * len..(slot + 1) * len];
                for (r, (_, j)) in list.into_iter().enumerate() {
                    out[j] = r as u32 + 1;
                }
            }
        });
        Self { ranks, len }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn rank(&self, i: usize, j: usize) -> u32 {
        self.ranks[i * self.len + j]
    }
}

/// Per-point trustworthiness of `emb` against `features` at neighborhood size `k`.
pub fn trustworthiness(features: &FeatureMatrix, emb: &Embedding, k: usize) -> Result<TrustworthinessReport> {
    check(features.nrows(), emb, k)?;
    if features.index_map != emb.index_map {
        return Err(Error::domain("features and embedding rows refer to different samples"));
    }
    trustworthiness_with(&InputRanks::new(features), emb, k)
}

fn check(len: usize, emb: &Embedding, k: usize) -> Result<()> {
    if emb.len() != len {
        return Err(Error::domain(format!("embedding has {} rows, features have {len}", emb.len())));
    }
    if k == 0 || 2 * k >= len {
        return Err(Error::domain(format!("trustworthiness needs 0 < k < M'/2, got k = {k}, M' = {len}")));
    }
    Ok(())
}

/// Trustworthiness from a precomputed input rank table.
pub fn trustworthiness_with(ranks: &InputRanks, emb: &Embedding, k: usize) -> Result<TrustworthinessReport> {
    let m = ranks.len();
    check(m, emb, k)?;
    let norm = 2.0 / (k as f64 * (2 * m - 3 * k - 1) as f64);
    let per_point: Vec<f64> = (0..m)
        .into_par_iter()
        .map(|i| {
            let row = emb.coords.row(i);
            let mut pairs: Vec<(f64, usize)> =
                (0..m).filter(|&j| j != i).map(|j| (sq_dist(row, emb.coords.row(j)), j)).collect();
            pairs.select_nth_unstable_by(k - 1, by_distance_then_index);
            let penalty: u64 = pairs[..k]
                .iter()
                .map(|&(_, j)| ranks.rank(i, j) as u64)
                .filter(|&r| r > k as u64)
                .map(|r| r - k as u64)
                .sum();
            (1.0 - norm * penalty as f64).clamp(0.0, 1.0)
        })
        .collect();
    let t_min = per_point.iter().cloned().fold(f64::INFINITY, f64::min);
    Ok(TrustworthinessReport { per_point, t_min, k })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn ranks_break_ties_by_index() {
        let f = FeatureMatrix::from_rows(array![[0.0], [1.0], [-1.0], [2.0]]);
        let r = InputRanks::new(&f);
        assert_eq!(r.rank(0, 1), 1);
        assert_eq!(r.rank(0, 2), 2);
        assert_eq!(r.rank(0, 3), 3);
        assert_eq!(r.rank(0, 0), 0);
    }

    #[test]
    fn k_must_stay_below_half() {
        let f = FeatureMatrix::from_rows(array![[0.0], [1.0], [2.0], [3.0]]);
        let e = Embedding::new(f.values.clone(), f.index_map.clone()).unwrap();
        assert!(trustworthiness(&f, &e, 1).is_ok());
        assert!(trustworthiness(&f, &e, 2).is_err());
        assert!(trustworthiness(&f, &e, 0).is_err());
    }
}
