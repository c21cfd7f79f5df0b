//! Central finite differences with step `h = 1e-4·(1 + |xᵢ|)`.

use crate::error::Result;
use crate::linalg::{self, Matrix, Vector};
use crate::models::ScoreModel;

fn step(x: f64) -> f64 {
    1e-4 * (1.0 + x.abs())
}

/// Finite-difference gradient of `log_density`.
pub fn gradient(model: &dyn ScoreModel, x: &Vector) -> Result<Vector> {
    let mut g = Vector::zeros(x.len());
    let mut probe = x.clone();
    for i in 0..x.len() {
        let h = step(x[i]);
        probe[i] = x[i] + h;
        let up = model.log_density(&probe)?;
        probe[i] = x[i] - h;
        let down = model.log_density(&probe)?;
        probe[i] = x[i];
        g[i] = (up - down) / (2.0 * h);
    }
    Ok(g)
}

/// Finite-difference negative Hessian from `score`, symmetrized.
pub fn neg_hessian(model: &dyn ScoreModel, x: &Vector) -> Result<Matrix> {
    let d = x.len();
    let mut h = Matrix::zeros(d, d);
    let mut probe = x.clone();
    for j in 0..d {
        let step_j = step(x[j]);
        probe[j] = x[j] + step_j;
        let up = model.score(&probe)?;
        probe[j] = x[j] - step_j;
        let down = model.score(&probe)?;
        probe[j] = x[j];
        let col = (down - up) / (2.0 * step_j);
        h.set_column(j, &col);
    }
    Ok(linalg::symmetrize(&h))
}

/// `|a - b|_∞ / max(1, |b|_∞)`.
pub fn relative_gap(a: &[f64], b: &[f64]) -> f64 {
    let scale = b.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    a.iter()
        .zip(b)
        .fold(0.0f64, |m, (x, y)| m.max((x - y).abs()))
        / scale
}
