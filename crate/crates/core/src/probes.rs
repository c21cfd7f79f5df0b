//! Probe points for sup-type checks: bulk draws plus a ring of tail points.

use alloc::vec::Vec;

use crate::error::Result;
use crate::linalg::{self, Vector};
use crate::models::{exact_sample, ScoreModel};

pub const DEFAULT_BULK_PROBES: usize = 512;
pub const TAIL_PROBES: usize = 8;
const TAIL_RADIUS: f64 = 5.0;

/// Unit directions for the tail ring, spread over the planes spanned by
/// consecutive coordinate pairs.
fn tail_directions(d: usize) -> Vec<Vector> {
    (0..TAIL_PROBES)
        .map(|j| {
            let mut u = Vector::zeros(d);
            if d == 1 {
                u[0] = if j % 2 == 0 { 1.0 } else { -1.0 };
            } else {
                let angle = core::f64::consts::TAU * j as f64 / TAIL_PROBES as f64;
                let plane = (j / 2) % d;
                u[plane] = libm::cos(angle);
                u[(plane + 1) % d] += libm::sin(angle);
                u /= u.norm();
            }
            u
        })
        .collect()
}

/// `8` points at distance `5·√(trace cov)` from `center`.
pub fn tail_points(center: &Vector, trace_cov: f64) -> Vec<Vector> {
    let r = TAIL_RADIUS * libm::sqrt(trace_cov.max(0.0));
    tail_directions(center.len())
        .into_iter()
        .map(|u| center + u * r)
        .collect()
}

/// `n_bulk` exact draws from `model` followed by the tail ring around
/// their sample mean.
pub fn probe_points(model: &dyn ScoreModel, n_bulk: usize, seed: u64) -> Result<Vec<Vector>> {
    let mut pts = exact_sample(model, n_bulk.max(2), seed)?;
    let (mean, cov) = linalg::sample_moments(&pts);
    pts.truncate(n_bulk);
    pts.extend(tail_points(&mean, cov.trace()));
    Ok(pts)
}
