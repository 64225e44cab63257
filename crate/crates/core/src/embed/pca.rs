use nalgebra::DMatrix;
use ndarray::{Array1, Array2, Axis};

use super::Embedding;
use crate::error::{Error, Result};
use crate::features::FeatureMatrix;
use crate::linalg::{dense_eigen_ascending, lanczos_largest, SymmetricOperator};

const DENSE_LIMIT: usize = 400;
const RANK_TOL: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct PcaModel {
    pub mean: Array1<f64>,
    /// Principal directions as rows, `dim x D`.
    pub components: Array2<f64>,
    /// Singular values of the centered data for the kept directions.
    pub singular_values: Vec<f64>,
    pub scores: Embedding,
}

/// `X^T X` (or `X X^T`) applied without forming it.
struct GramOperator<'a> {
    x: &'a Array2<f64>,
    transpose: bool,
}

impl SymmetricOperator for GramOperator<'_> {
    fn dim(&self) -> usize {
        if self.transpose {
            self.x.nrows()
        } else {
            self.x.ncols()
        }
    }

    fn apply(&self, v: &[f64], y: &mut [f64]) {
        let v = ndarray::ArrayView1::from(v);
        let out = if self.transpose {
            self.x.dot(&self.x.t().dot(&v))
        } else {
            self.x.t().dot(&self.x.dot(&v))
        };
        y.copy_from_slice(out.as_slice().expect("contiguous"));
    }
}

fn small_gram(x: &Array2<f64>, transpose: bool) -> DMatrix<f64> {
    let g = if transpose { x.dot(&x.t()) } else { x.t().dot(x) };
    DMatrix::from_fn(g.nrows(), g.ncols(), |i, j| g[(i, j)])
}

/// Top eigenpairs of the Gram operator, descending, as (values, vectors).
fn top_eigen(x: &Array2<f64>, transpose: bool, k: usize) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    let side = if transpose { x.nrows() } else { x.ncols() };
    if side <= DENSE_LIMIT {
        let eig = dense_eigen_ascending(small_gram(x, transpose))?;
        let take = k.min(side);
        let values = eig.values.iter().rev().take(take).copied().collect();
        let vectors = eig.vectors.into_iter().rev().take(take).collect();
        return Ok((values, vectors));
    }
    let pairs = lanczos_largest(&GramOperator { x, transpose }, k, &[], 0x5eed)?;
    Ok((pairs.values, pairs.vectors))
}

/// PCA fit returning directions, singular values and scores.
pub fn pca_model(features: &FeatureMatrix, dim: usize) -> Result<PcaModel> {
    let (m, d) = features.values.dim();
    if dim == 0 {
        return Err(Error::domain("embedding dimension must be at least 1"));
    }
    if m <= dim {
        return Err(Error::domain(format!("PCA needs more than {dim} rows, got {m}")));
    }
    let mean = features.values.mean_axis(Axis(0)).expect("rows present");
    let centered = &features.values - &mean;

    // eigen-decompose the smaller Gram side
    let transpose = m < d;
    let (values, vectors) = top_eigen(&centered, transpose, dim.min(m.min(d)))?;
    let scale = values.first().copied().unwrap_or(0.0).max(0.0);
    let rank = values.iter().filter(|&&v| v > RANK_TOL * scale && v > 0.0).count();
    if rank < dim {
        return Err(Error::RankDeficient { rank, dim });
    }

    let mut components = Array2::<f64>::zeros((dim, d));
    let mut singular_values = Vec::with_capacity(dim);
    for (c, (value, vec)) in values.iter().zip(&vectors).enumerate().take(dim) {
        let s = value.sqrt();
        let direction: Array1<f64> = if transpose {
            // right singular vector from a left one: v = X^T u / s
            centered.t().dot(&Array1::from(vec.clone())) / s
        } else {
            Array1::from(vec.clone())
        };
        let (pivot, _) = direction
            .iter()
            .enumerate()
            .fold((0, -1.0), |(bi, bv), (i, &x)| if x.abs() > bv { (i, x.abs()) } else { (bi, bv) });
        let sign = if direction[pivot] < 0.0 { -1.0 } else { 1.0 };
        components.row_mut(c).assign(&(direction * sign));
        singular_values.push(s);
    }

    let scores = centered.dot(&components.t());
    Ok(PcaModel {
        mean,
        components,
        singular_values,
        scores: Embedding::new(scores, features.index_map.clone())?,
    })
}

/// Projection of centered features on the top `dim` principal directions.
pub fn pca(features: &FeatureMatrix, dim: usize) -> Result<Embedding> {
    Ok(pca_model(features, dim)?.scores)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(m: usize, d: usize, seed: u64) -> FeatureMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        FeatureMatrix::from_rows(Array2::from_shape_fn((m, d), |_| rng.random_range(-1.0..1.0)))
    }

    #[test]
    fn collinear_points() {
        let f = FeatureMatrix::from_rows(array![[-1.0, -1.0], [0.0, 0.0], [1.0, 1.0]]);
        let s = pca(&f, 1).unwrap();
        let r2 = 2f64.sqrt();
        for (got, want) in s.coords.column(0).iter().zip([-r2, 0.0, r2]) {
            assert!((got - want).abs() < 1e-12, "{got} vs {want}");
        }
    }

    #[test]
    fn constant_column_is_ignored() {
        let f = random(30, 4, 1);
        let mut wide = Array2::<f64>::from_elem((30, 5), 7.5);
        wide.slice_mut(ndarray::s![.., ..4]).assign(&f.values);
        let a = pca(&f, 2).unwrap();
        let b = pca(&FeatureMatrix::from_rows(wide), 2).unwrap();
        for (x, y) in a.coords.iter().zip(b.coords.iter()) {
            assert!((x - y).abs() < 1e-10);
        }
    }

    #[test]
    fn reconstruction_error_matches_discarded_spectrum() {
        let f = random(100, 20, 2);
        let k = 5;
        let model = pca_model(&f, k).unwrap();
        let centered = &f.values - &model.mean;
        let recon = model.scores.coords.dot(&model.components);
        let err: f64 = (&centered - &recon).iter().map(|v| v * v).sum();

        let full = DMatrix::from_fn(100, 20, |i, j| centered[(i, j)]).svd(false, false);
        let mut sv: Vec<f64> = full.singular_values.iter().copied().collect();
        sv.sort_by(|a, b| b.total_cmp(a));
        let discarded: f64 = sv[k..].iter().map(|s| s * s).sum();
        assert!((err - discarded).abs() < 1e-8, "{err} vs {discarded}");
        for (s, t) in model.singular_values.iter().zip(&sv) {
            assert!((s - t).abs() < 1e-9);
        }
    }

    #[test]
    fn wide_and_large_inputs_use_the_implicit_operator() {
        // both sides above the dense limit
        let f = random(450, 420, 3);
        let model = pca_model(&f, 2).unwrap();
        let centered = &f.values - &model.mean;
        let full = DMatrix::from_fn(450, 420, |i, j| centered[(i, j)]).svd(false, false);
        let mut sv: Vec<f64> = full.singular_values.iter().copied().collect();
        sv.sort_by(|a, b| b.total_cmp(a));
        for (s, t) in model.singular_values.iter().zip(&sv) {
            assert!((s - t).abs() < 1e-7 * t, "{s} vs {t}");
        }
    }

    #[test]
    fn rank_deficiency_is_reported() {
        let f = FeatureMatrix::from_rows(array![[1.0, 2.0], [2.0, 4.0], [3.0, 6.0]]);
        assert!(matches!(pca(&f, 2), Err(Error::RankDeficient { rank: 1, dim: 2 })));
        assert!(pca(&f, 3).is_err());
    }
}
