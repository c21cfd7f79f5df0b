//! Small ready-made targets used by tests, examples and the CLI.

use alloc::vec;

use crate::linalg::{Matrix, Vector};

use super::{GaussianMixture, SlcQuadraticPlus};

/// Equal-weight 2-D mixture with modes at `(±2, 0)` and covariance `0.25·I`.
pub fn bimodal() -> GaussianMixture {
    GaussianMixture::new(
        vec![0.5, 0.5],
        vec![Vector::from_vec(vec![-2.0, 0.0]), Vector::from_vec(vec![2.0, 0.0])],
        vec![Matrix::identity(2, 2) * 0.25; 2],
    )
    .expect("bundled bimodal mixture is valid")
}

/// 2-D three-mode mixture used for the contour and quiver grids.
pub fn trimodal() -> GaussianMixture {
    let cov = Matrix::identity(2, 2) * 0.2;
    GaussianMixture::new(
        vec![0.3, 0.3, 0.4],
        vec![
            Vector::from_vec(vec![-2.0, -1.0]),
            Vector::from_vec(vec![2.0, -1.0]),
            Vector::from_vec(vec![0.0, 2.0]),
        ],
        vec![cov.clone(), cov.clone(), cov],
    )
    .expect("bundled trimodal mixture is valid")
}

/// `N(0, diag(1, 1/κ))`, so that `m = 1` and `M = κ`.
pub fn anisotropic_gaussian(kappa: f64) -> GaussianMixture {
    GaussianMixture::gaussian(
        Vector::zeros(2),
        Matrix::from_diagonal(&Vector::from_vec(vec![1.0, 1.0 / kappa])),
    )
    .expect("anisotropic Gaussian needs κ > 0")
}

/// Strongly log-concave 2-D target: precision `diag(1, 4)` with a small
/// cosine ripple, giving `(m, M) = (0.9, 4.1)`.
pub fn rippled_quadratic() -> SlcQuadraticPlus {
    SlcQuadraticPlus::new(
        Matrix::from_diagonal(&Vector::from_vec(vec![1.0, 4.0])),
        0.1,
        Vector::from_vec(vec![1.0, 1.0]),
    )
    .expect("bundled rippled quadratic is valid")
}
