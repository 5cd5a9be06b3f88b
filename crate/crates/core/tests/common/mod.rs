//! nalgebra-backed oracles shared by the integration tests.

#![allow(dead_code)]

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use sysid_core::{Matrix, Vector};

pub fn to_na(m: &Matrix) -> DMatrix<f64> {
    DMatrix::from_row_slice(m.rows(), m.cols(), m.as_slice())
}

pub fn from_na(m: &DMatrix<f64>) -> Matrix {
    Matrix::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)])
}

/// Largest singular value from a full SVD.
pub fn svd_norm(m: &Matrix) -> f64 {
    to_na(m).singular_values().max()
}

/// Ascending eigenvalues of a symmetric matrix.
pub fn sym_eigenvalues(m: &Matrix) -> Vec<f64> {
    let mut ev: Vec<f64> = to_na(m)
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .copied()
        .collect();
    ev.sort_by(|a, b| a.partial_cmp(b).unwrap());
    ev
}

pub fn gaussian_matrix<R: Rng>(rng: &mut R, rows: usize, cols: usize) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

pub fn gaussian_vec<R: Rng>(rng: &mut R, dim: usize) -> Vector {
    Vector::from_vec((0..dim).map(|_| rng.sample(StandardNormal)).collect())
}

/// `B B^T + shift I`.
pub fn random_spd<R: Rng>(rng: &mut R, n: usize, shift: f64) -> Matrix {
    let b = to_na(&gaussian_matrix(rng, n, n));
    from_na(&(&b * b.transpose() + DMatrix::identity(n, n) * shift))
}

/// Random matrix rescaled to the given spectral norm.
pub fn random_with_norm<R: Rng>(rng: &mut R, n: usize, norm: f64) -> Matrix {
    let m = gaussian_matrix(rng, n, n);
    let s = svd_norm(&m);
    m.scale(norm / s)
}

/// `sum_{s=0}^{terms} A^s Sigma (A^T)^s`.
pub fn truncated_lyapunov(a: &Matrix, sigma: &Matrix, terms: usize) -> Matrix {
    let a = to_na(a);
    let sigma = to_na(sigma);
    let mut power = DMatrix::identity(a.nrows(), a.ncols());
    let mut g = DMatrix::zeros(a.nrows(), a.ncols());
    for _ in 0..=terms {
        g += &power * &sigma * power.transpose();
        power = &a * power;
    }
    from_na(&g)
}

/// Batch ridge least squares `(sum y x^T)(sum x x^T + eps I)^{-1}`.
pub fn batch_ols(pairs: &[(Vector, Vector)], eps: f64) -> Matrix {
    let d = pairs[0].0.dim();
    let mut cov = DMatrix::<f64>::identity(d, d) * eps;
    let mut cross = DMatrix::<f64>::zeros(d, d);
    for (x, y) in pairs {
        let xv = nalgebra::DVector::from_column_slice(x);
        let yv = nalgebra::DVector::from_column_slice(y);
        cov += &xv * xv.transpose();
        cross += &yv * xv.transpose();
    }
    // A cov = cross  <=>  cov A^T = cross^T.
    let chol = cov
        .cholesky()
        .expect("ridge covariance is positive definite");
    from_na(&chol.solve(&cross.transpose()).transpose())
}

pub fn max_abs_diff(a: &Matrix, b: &Matrix) -> f64 {
    a.as_slice()
        .iter()
        .zip(b.as_slice())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// Consecutive transitions `(X_i, X_{i+1})` of a sample path.
pub fn transitions(samples: &[Vector]) -> Vec<(Vector, Vector)> {
    samples
        .windows(2)
        .map(|w| (w[0].clone(), w[1].clone()))
        .collect()
}
