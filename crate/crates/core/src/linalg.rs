//! Symmetric eigen-solvers: dense (small problems) and Lanczos with full
//! reorthogonalization (large sparse or implicit operators).

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// A real symmetric linear map applied matrix-free.
pub trait SymmetricOperator: Sync {
    fn dim(&self) -> usize;
    fn apply(&self, x: &[f64], y: &mut [f64]);
}

#[derive(Debug, Clone)]
pub struct EigenPairs {
    pub values: Vec<f64>,
    /// Unit-norm eigenvectors, one per value.
    pub vectors: Vec<Vec<f64>>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    y.iter_mut().zip(x).for_each(|(yi, xi)| *yi += alpha * xi);
}

fn normalize(v: &mut [f64]) -> f64 {
    let n = dot(v, v).sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
    n
}

fn orthogonalize(v: &mut [f64], basis: &[Vec<f64>]) {
    // two passes of classical Gram-Schmidt
    for _ in 0..2 {
        for b in basis {
            let c = dot(v, b);
            axpy(-c, b, v);
        }
    }
}

/// All eigenpairs of a dense symmetric matrix, ascending.
pub fn dense_eigen_ascending(matrix: DMatrix<f64>) -> Result<EigenPairs> {
    let n = matrix.nrows();
    if matrix.iter().any(|v| !v.is_finite()) {
        return Err(Error::Eigen("matrix has non-finite entries".into()));
    }
    let eig = SymmetricEigen::new(matrix);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]).then(i.cmp(&j)));
    Ok(EigenPairs {
        values: order.iter().map(|&i| eig.eigenvalues[i]).collect(),
        vectors: order.iter().map(|&i| eig.eigenvectors.column(i).iter().copied().collect()).collect(),
    })
}

/// The `k` algebraically largest eigenpairs of `op` restricted to the
/// orthogonal complement of `deflate` (orthonormal vectors), descending.
pub fn lanczos_largest(op: &dyn SymmetricOperator, k: usize, deflate: &[Vec<f64>], seed: u64) -> Result<EigenPairs> {
    let n = op.dim();
    let room = n.saturating_sub(deflate.len());
    if k == 0 {
        return Ok(EigenPairs { values: vec![], vectors: vec![] });
    }
    if k > room {
        return Err(Error::Eigen(format!("{k} eigenpairs requested from a {room}-dimensional space")));
    }
    let cap = room.min(800);
    let mut steps = room.min((4 * k + 60).max(120));
    loop {
        let (pairs, converged) = lanczos_run(op, k, deflate, steps, seed)?;
        if converged || steps >= cap {
            return Ok(pairs);
        }
        steps = (2 * steps).min(cap);
    }
}

fn lanczos_run(op: &dyn SymmetricOperator, k: usize, deflate: &[Vec<f64>], steps: usize, seed: u64) -> Result<(EigenPairs, bool)> {
    let n = op.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut q: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    orthogonalize(&mut q, deflate);
    if normalize(&mut q) == 0.0 {
        return Err(Error::Eigen("start vector vanished after deflation".into()));
    }

    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(steps);
    let mut alpha = Vec::with_capacity(steps);
    let mut beta: Vec<f64> = Vec::with_capacity(steps);
    let mut w = vec![0.0; n];
    let mut last_beta = 0.0;
    for _ in 0..steps {
        op.apply(&q, &mut w);
        let a = dot(&w, &q);
        axpy(-a, &q, &mut w);
        if let (Some(prev), Some(&b)) = (basis.last(), beta.last()) {
            axpy(-b, prev, &mut w);
        }
        basis.push(q.clone());
        alpha.push(a);
        orthogonalize(&mut w, deflate);
        orthogonalize(&mut w, &basis);
        let b = dot(&w, &w).sqrt();
        if !b.is_finite() || !a.is_finite() {
            return Err(Error::Eigen("Lanczos recurrence produced non-finite values".into()));
        }
        last_beta = b;
        let scale = alpha.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);
        if b <= 1e-12 * scale {
            // invariant subspace: Ritz pairs are exact
            last_beta = 0.0;
            break;
        }
        beta.push(b);
        q = w.iter().map(|v| v / b).collect();
    }

    let m = basis.len();
    let mut t = DMatrix::<f64>::zeros(m, m);
    for i in 0..m {
        t[(i, i)] = alpha[i];
        if i + 1 < m {
            t[(i, i + 1)] = beta[i];
            t[(i + 1, i)] = beta[i];
        }
    }
    let ritz = dense_eigen_ascending(t)?;
    let take = k.min(m);
    let norm_scale = ritz.values.iter().fold(0.0f64, |acc, v| acc.max(v.abs())).max(1e-300);
    let mut values = Vec::with_capacity(take);
    let mut vectors = Vec::with_capacity(take);
    let mut converged = take == k;
    for idx in (m - take..m).rev() {
        let s = &ritz.vectors[idx];
        let residual = (last_beta * s[m - 1]).abs();
        if residual > 1e-8 * norm_scale {
            converged = false;
        }
        let mut v = vec![0.0; n];
        for (coef, b) in s.iter().zip(&basis) {
            axpy(*coef, b, &mut v);
        }
        normalize(&mut v);
        values.push(ritz.values[idx]);
        vectors.push(v);
    }
    Ok((EigenPairs { values, vectors }, converged))
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Dense(DMatrix<f64>);

    impl SymmetricOperator for Dense {
        fn dim(&self) -> usize {
            self.0.nrows()
        }
        fn apply(&self, x: &[f64], y: &mut [f64]) {
            for (i, yi) in y.iter_mut().enumerate() {
                *yi = (0..x.len()).map(|j| self.0[(i, j)] * x[j]).sum();
            }
        }
    }

    fn random_symmetric(n: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        &a + a.transpose()
    }

    #[test]
    fn lanczos_matches_dense_top_eigenvalues() {
        let m = random_symmetric(150, 3);
        let dense = dense_eigen_ascending(m.clone()).unwrap();
        let top = lanczos_largest(&Dense(m.clone()), 4, &[], 7).unwrap();
        for (i, v) in top.values.iter().enumerate() {
            let expect = dense.values[149 - i];
            assert!((v - expect).abs() < 1e-8 * expect.abs().max(1.0), "{v} vs {expect}");
            // eigen-equation residual
            let x = nalgebra::DVector::from_vec(top.vectors[i].clone());
            let r = (&m * &x - x.scale(*v)).norm();
            assert!(r < 1e-6, "residual {r}");
        }
    }

    #[test]
    fn deflated_direction_is_excluded() {
        let m = random_symmetric(60, 9);
        let dense = dense_eigen_ascending(m.clone()).unwrap();
        let lead = dense.vectors[59].clone();
        let top = lanczos_largest(&Dense(m), 1, &[lead], 1).unwrap();
        assert!((top.values[0] - dense.values[58]).abs() < 1e-8);
    }

    #[test]
    fn small_space_exhausts_exactly() {
        let m = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![3.0, 1.0, 2.0]));
        let top = lanczos_largest(&Dense(m), 3, &[], 0).unwrap();
        for (v, e) in top.values.iter().zip([3.0, 2.0, 1.0]) {
            assert!((v - e).abs() < 1e-12);
        }
    }
}
