//! Small dense linear-algebra helpers on top of nalgebra.

use alloc::format;
use alloc::vec::Vec;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};

use crate::error::{Error, Result};

pub type Vector = DVector<f64>;
pub type Matrix = DMatrix<f64>;

/// Largest absolute entry of `m - mᵀ`.
pub fn max_asymmetry(m: &Matrix) -> f64 {
    let n = m.nrows();
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in 0..i {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

pub fn symmetrize(m: &Matrix) -> Matrix {
    (m + m.transpose()) * 0.5
}

/// Eigenvalues of a symmetric matrix in ascending order.
pub fn sym_eigenvalues(m: &Matrix) -> Vec<f64> {
    let eig = SymmetricEigen::new(symmetrize(m));
    let mut vals: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    vals.sort_by(f64::total_cmp);
    vals
}

/// `(smallest, largest)` eigenvalue of a symmetric matrix.
pub fn eig_range(m: &Matrix) -> (f64, f64) {
    let vals = sym_eigenvalues(m);
    (vals[0], vals[vals.len() - 1])
}

/// Largest eigenvalue together with its unit eigenvector.
pub fn top_eigenpair(m: &Matrix) -> (f64, Vector) {
    let eig = SymmetricEigen::new(symmetrize(m));
    let mut best = 0;
    for i in 1..eig.eigenvalues.len() {
        if eig.eigenvalues[i] > eig.eigenvalues[best] {
            best = i;
        }
    }
    (eig.eigenvalues[best], eig.eigenvectors.column(best).into_owned())
}

/// Operator norm of a symmetric matrix.
pub fn sym_op_norm(m: &Matrix) -> f64 {
    let (lo, hi) = eig_range(m);
    lo.abs().max(hi.abs())
}

/// Square root of a symmetric positive semidefinite matrix; negative
/// eigenvalues from roundoff are clipped to zero.
pub fn sqrtm_psd(m: &Matrix) -> Matrix {
    let eig = SymmetricEigen::new(symmetrize(m));
    let vals = eig.eigenvalues.map(|v| libm::sqrt(v.max(0.0)));
    &eig.eigenvectors * Matrix::from_diagonal(&vals) * eig.eigenvectors.transpose()
}

pub fn cholesky(m: &Matrix) -> Result<Cholesky<f64, Dyn>> {
    Cholesky::new(symmetrize(m))
        .ok_or_else(|| Error::Numerical(format!("matrix of size {} is not positive definite", m.nrows())))
}

pub fn log_det_chol(chol: &Cholesky<f64, Dyn>) -> f64 {
    let l = chol.l_dirty();
    (0..l.nrows()).map(|i| 2.0 * libm::log(l[(i, i)])).sum()
}

pub fn spd_inverse(m: &Matrix) -> Result<Matrix> {
    Ok(symmetrize(&cholesky(m)?.inverse()))
}

pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + libm::log(values.iter().map(|v| libm::exp(v - max)).sum::<f64>())
}

/// Closed-form squared 2-Wasserstein distance between two Gaussians.
pub fn w2_squared_gaussian(m1: &Vector, c1: &Matrix, m2: &Vector, c2: &Matrix) -> f64 {
    let root2 = sqrtm_psd(c2);
    let cross = sqrtm_psd(&(&root2 * c1 * &root2));
    let bures = c1.trace() + c2.trace() - 2.0 * cross.trace();
    (m1 - m2).norm_squared() + bures.max(0.0)
}

/// Closed-form `KL(N(m1, c1) || N(m2, c2))`.
pub fn kl_gaussian(m1: &Vector, c1: &Matrix, m2: &Vector, c2: &Matrix) -> Result<f64> {
    let d = m1.len() as f64;
    let chol2 = cholesky(c2)?;
    let chol1 = cholesky(c1)?;
    let diff = m2 - m1;
    let trace_term = chol2.solve(c1).trace();
    let maha = diff.dot(&chol2.solve(&diff));
    let kl = 0.5 * (trace_term + maha - d + log_det_chol(&chol2) - log_det_chol(&chol1));
    Ok(kl.max(0.0))
}

/// Sample mean and (unbiased) covariance of a batch of vectors.
pub fn sample_moments(samples: &[Vector]) -> (Vector, Matrix) {
    let n = samples.len();
    let d = samples.first().map_or(0, |s| s.len());
    let mut mean = Vector::zeros(d);
    for s in samples {
        mean += s;
    }
    if n > 0 {
        mean /= n as f64;
    }
    let mut cov = Matrix::zeros(d, d);
    for s in samples {
        let c = s - &mean;
        cov.ger(1.0, &c, &c, 1.0);
    }
    if n > 1 {
        cov /= (n - 1) as f64;
    }
    (mean, cov)
}
