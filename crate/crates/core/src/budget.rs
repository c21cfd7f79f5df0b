//! Splitting a global accuracy target across the stages of a trajectory.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{invalid, Error, Result};
use crate::planner::Plan;

#[cfg(feature = "serde")]
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub enum Distance {
    #[default]
    #[cfg_attr(feature = "serde", serde(rename = "KL"))]
    Kl,
    W2,
}

/// Per-stage tolerances. Entries of `stages`, `shares`, `weights` and
/// `deltas` are aligned; stage indices follow the forward trajectory.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct StageBudget {
    pub distance: Distance,
    pub epsilon: f64,
    /// Accuracy in the units the stages are solved in: `ε` itself, or
    /// `ε/(√2 σ_tar)` for multi-modal W2.
    pub epsilon_prime: f64,
    pub stages: Vec<usize>,
    pub shares: Vec<f64>,
    /// Amplification of a stage error at the output, `∏ 1/a_ℓ` over the
    /// stages traversed after it (1 when the kernels are contractive).
    pub weights: Vec<f64>,
    pub deltas: Vec<f64>,
}

impl StageBudget {
    pub fn delta_for(&self, stage: usize) -> Option<f64> {
        self.stages.iter().position(|s| *s == stage).map(|i| self.deltas[i])
    }

    /// `Σ weights_k · δ_k`, which equals `epsilon_prime` by construction.
    pub fn propagated_total(&self) -> f64 {
        self.weights.iter().zip(&self.deltas).map(|(w, d)| w * d).sum()
    }
}

/// Uniform shares over the stages of `plan`.
///
/// SLC plans have stages `0..=K`, all kernels contractive, and
/// `δ_k = s_k ε` for either distance (W2 measured as `√m·W2`, the rescaled
/// units). Multi-modal plans have stages `1..=K`; KL uses `δ_k = s_k ε` and
/// W2 divides the rescaled target `ε′ = ε/(√2 σ_tar)` by the amplification
/// `∏_{1≤ℓ<k} 1/a_ℓ` so that the propagated errors sum to `ε′`.
pub fn allocate_budget(k: usize, epsilon: f64, distance: Distance, plan: &Plan) -> Result<StageBudget> {
    if !(epsilon > 0.0) || !epsilon.is_finite() {
        return Err(invalid("epsilon", format!("must be positive, got {epsilon}")));
    }
    if k != plan.k() {
        return Err(Error::PlanMismatch(format!("budget for K = {k} but plan has K = {}", plan.k())));
    }
    let (stages, weights, epsilon_prime): (Vec<usize>, Vec<f64>, f64) = match plan {
        Plan::Slc(_) => ((0..=k).collect(), alloc::vec![1.0; k + 1], epsilon),
        Plan::Multi(p) => {
            let stages: Vec<usize> = (1..=k).collect();
            match distance {
                Distance::Kl => (stages, alloc::vec![1.0; k], epsilon),
                Distance::W2 => {
                    let mut weights = Vec::with_capacity(k);
                    let mut w = 1.0;
                    for stage in 1..=k {
                        if stage > 1 {
                            w /= p.stepsizes[stage - 1];
                        }
                        weights.push(w);
                    }
                    let eps_prime = epsilon / (core::f64::consts::SQRT_2 * p.early_stop);
                    (stages, weights, eps_prime)
                }
            }
        }
    };
    let n = stages.len() as f64;
    let shares = alloc::vec![1.0 / n; stages.len()];
    let deltas = shares
        .iter()
        .zip(&weights)
        .map(|(s, w)| s * epsilon_prime / w)
        .collect();
    Ok(StageBudget {
        distance,
        epsilon,
        epsilon_prime,
        stages,
        shares,
        weights,
        deltas,
    })
}
