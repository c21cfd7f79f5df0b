//! Forward trajectory design: stepsizes, conditioning trackers and length.

use alloc::format;
use alloc::vec::Vec;

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{invalid, Error, Result};
use crate::linalg::{self, Vector};
use crate::models::{GaussianMixture, Model};
use crate::probes;

#[cfg(feature = "serde")]
use serde::{Deserialize, Serialize};

/// Trajectory for an `(m, M)`-SLC target, in the units of `√m·X`.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct SlcPlan {
    pub m: f64,
    #[cfg_attr(feature = "serde", serde(rename = "M"))]
    pub big_m: f64,
    /// `μ₀ … μ_K`, with `μ₀ = M/m`.
    pub mu_sequence: Vec<f64>,
    /// `a₀ … a_{K-1}`.
    pub stepsizes: Vec<f64>,
    #[cfg_attr(feature = "serde", serde(rename = "K"))]
    pub k: usize,
    /// `√m`; sampling happens for `√m·X` and is mapped back by `1/√m`.
    pub rescale_factor: f64,
}

impl SlcPlan {
    pub fn kappa(&self) -> f64 {
        self.mu_sequence[0]
    }

    /// Law of the rescaled stage variable `Y_k = α Y₀ + β W` as `(α, β)`.
    pub fn stage_signal_noise(&self, k: usize) -> (f64, f64) {
        let alpha2: f64 = self.stepsizes[..k].iter().map(|a| a * a).product();
        (libm::sqrt(alpha2), libm::sqrt((1.0 - alpha2).max(0.0)))
    }

    /// Sandwich of the stage marginal `p_k`: `[1, μ_k]`.
    pub fn marginal_bounds(&self, k: usize) -> (f64, f64) {
        (1.0, self.mu_sequence[k])
    }

    /// Sandwich of the backward conditional at stage `k < K`: `[1 + μ_k, 2μ_k]`.
    pub fn backward_bounds(&self, k: usize) -> (f64, f64) {
        let mu = self.mu_sequence[k];
        (1.0 + mu, 2.0 * mu)
    }

    pub fn terminal_bounds(&self) -> (f64, f64) {
        self.marginal_bounds(self.k)
    }
}

/// `a` with `a² = μ/(1 + μ)`.
pub fn slc_stepsize(mu: f64) -> Result<f64> {
    if !(mu >= 1.0) || !mu.is_finite() {
        return Err(invalid("mu", format!("condition tracker must be ≥ 1, got {mu}")));
    }
    Ok(libm::sqrt(mu / (1.0 + mu)))
}

/// The SLC trajectory for `m I ⪯ -∇² log p ⪯ M I`.
pub fn plan_slc(m: f64, big_m: f64) -> Result<SlcPlan> {
    if !(m > 0.0) || !m.is_finite() {
        return Err(invalid("m", format!("strong convexity must be positive, got {m}")));
    }
    if !(big_m >= m) || !big_m.is_finite() {
        return Err(invalid("M", format!("smoothness must satisfy M ≥ m, got M = {big_m}, m = {m}")));
    }
    let mu0 = big_m / m;
    let excess = mu0 - 1.0;
    let mut mu_sequence = alloc::vec![mu0];
    let mut stepsizes = Vec::new();
    let mut k = 0;
    // Halving the excess: μ_k = 1 + (μ₀ - 1)/2^k, computed without drift.
    while mu_sequence[k] > 2.0 {
        stepsizes.push(slc_stepsize(mu_sequence[k])?);
        k += 1;
        mu_sequence.push(1.0 + excess * libm::ldexp(1.0, -(k as i32)));
    }
    Ok(SlcPlan {
        m,
        big_m,
        mu_sequence,
        stepsizes,
        k,
        rescale_factor: libm::sqrt(m),
    })
}

/// How a covariance envelope value was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum EnvelopeMode {
    /// `R²` for support in a ball of radius `R`; a certified bound.
    AnalyticBound,
    /// Safety factor times the largest value over probe points; heuristic.
    MonteCarloSup,
}

/// Estimator of `sup_y ‖cov(X | Y = y)‖_op`.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct CovEnvelopeEstimator {
    pub mode: EnvelopeMode,
    pub probes: usize,
    pub safety_factor: f64,
    /// Support radius of the target in its own units, when known.
    pub support_radius: Option<f64>,
}

impl Default for CovEnvelopeEstimator {
    fn default() -> Self {
        Self {
            mode: EnvelopeMode::MonteCarloSup,
            probes: probes::DEFAULT_BULK_PROBES,
            safety_factor: 1.5,
            support_radius: None,
        }
    }
}

impl CovEnvelopeEstimator {
    pub fn analytic(support_radius: f64) -> Self {
        Self {
            mode: EnvelopeMode::AnalyticBound,
            support_radius: Some(support_radius),
            ..Self::default()
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.safety_factor >= 1.0) {
            return Err(invalid("safety_factor", format!("must be ≥ 1, got {}", self.safety_factor)));
        }
        if let Some(r) = self.support_radius {
            if !(r >= 0.0) || !r.is_finite() {
                return Err(invalid("support_radius", format!("must be ≥ 0, got {r}")));
            }
        }
        Ok(())
    }
}

/// A covariance envelope value together with its provenance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Envelope {
    pub value: f64,
    pub mode: EnvelopeMode,
}

/// `‖cov(X | θX + √(1-θ²)W = y)‖_op` for a mixture `X`.
pub fn posterior_cov_norm(model: &GaussianMixture, theta_sq: f64, y: &Vector) -> Result<f64> {
    let (_, cov) = model.posterior_moments(libm::sqrt(theta_sq), libm::sqrt(1.0 - theta_sq), y)?;
    Ok(linalg::sym_op_norm(&cov))
}

/// Envelope of the posterior covariance of `X` given `Y = θX + √(1-θ²)W`.
pub fn estimate_cov_envelope(
    model: &Model,
    theta_sq: f64,
    estimator: &CovEnvelopeEstimator,
    seed: u64,
) -> Result<Envelope> {
    estimator.validate()?;
    if !(theta_sq > 0.0 && theta_sq < 1.0) {
        return Err(invalid("theta_sq", format!("must lie in (0, 1), got {theta_sq}")));
    }
    let analytic = estimator.support_radius.map(|r| r * r);
    let mixture = model.as_mixture_ref();
    match (estimator.mode, mixture, analytic) {
        (EnvelopeMode::MonteCarloSup, Some(mix), _) => {
            let theta = libm::sqrt(theta_sq);
            let stage = mix.annealed(theta, libm::sqrt(1.0 - theta_sq))?;
            let mut pts = probes::probe_points(&stage, estimator.probes, seed)?;
            // The posterior covariance peaks between modes, where bulk draws are sparse.
            let means: Vec<Vector> = stage.means().to_vec();
            for i in 0..means.len() {
                pts.push(means[i].clone());
                for j in (i + 1)..means.len() {
                    pts.push((&means[i] + &means[j]) * 0.5);
                }
            }
            let mut sup = 0.0f64;
            for y in &pts {
                sup = sup.max(posterior_cov_norm(mix, theta_sq, y)?);
            }
            let mut value = estimator.safety_factor * sup;
            if let Some(bound) = analytic {
                value = value.min(bound);
            }
            Ok(Envelope {
                value,
                mode: EnvelopeMode::MonteCarloSup,
            })
        }
        (_, _, Some(bound)) => Ok(Envelope {
            value: bound,
            mode: EnvelopeMode::AnalyticBound,
        }),
        (EnvelopeMode::AnalyticBound, _, None) => Err(Error::EnvelopeUnavailable(
            "analytic mode needs a support radius".into(),
        )),
        (EnvelopeMode::MonteCarloSup, None, None) => Err(Error::EnvelopeUnavailable(
            "no closed-form posterior covariance and no support radius".into(),
        )),
    }
}

/// Trajectory for a multi-modal target smoothed at level `σ_tar`, in the
/// units of `X = X_data/σ_tar`.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct MultiPlan {
    /// `λ₀ … λ_K`; `λ₀ = 0` since `Y₀ = X` has no posterior spread.
    pub lambda_sequence: Vec<f64>,
    /// `a₀ … a_{K-1}`, with `a₀ = 1/√2`.
    pub stepsizes: Vec<f64>,
    /// Squared cumulative signal scales `θ₀² … θ²_{K-1}`, `θ_k² = ∏_{ℓ≤k} a_ℓ²`.
    pub theta_sequence: Vec<f64>,
    /// `B₁ … B_K`.
    pub cov_envelopes: Vec<f64>,
    pub envelope_modes: Vec<EnvelopeMode>,
    #[cfg_attr(feature = "serde", serde(rename = "K"))]
    pub k: usize,
    /// `σ_tar`.
    pub early_stop: f64,
    pub support_radius: Option<f64>,
}

impl MultiPlan {
    /// `(θ_{k-1}, √(1 - θ²_{k-1}))`: `Y_k = θ_{k-1} X + √(1-θ²_{k-1}) W` for `k ≥ 1`.
    pub fn stage_signal_noise(&self, k: usize) -> (f64, f64) {
        let t2 = self.theta_sequence[k - 1];
        (libm::sqrt(t2), libm::sqrt(1.0 - t2))
    }

    pub fn lambda(&self, k: usize) -> f64 {
        self.lambda_sequence[k]
    }

    /// Sandwich of the forward marginal at stage `k ≥ 1`: `[1 - λ_k, 2]`.
    pub fn marginal_bounds(&self, k: usize) -> (f64, f64) {
        (1.0 - self.lambda_sequence[k], 2.0)
    }

    /// Sandwich of the backward conditional at stage `1 ≤ k < K`.
    pub fn backward_bounds(&self, k: usize) -> (f64, f64) {
        let l = self.lambda_sequence[k];
        (l + 2.0, 2.0 * (l + 2.0))
    }

    pub fn terminal_bounds(&self) -> (f64, f64) {
        self.marginal_bounds(self.k)
    }

    pub fn max_envelope(&self) -> f64 {
        self.cov_envelopes.iter().copied().fold(0.0, f64::max)
    }
}

/// Either kind of trajectory, tagged `slc_plan` / `multi_plan` when serialized.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
#[cfg_attr(feature = "serde", serde(tag = "type"))]
pub enum Plan {
    #[cfg_attr(feature = "serde", serde(rename = "slc_plan"))]
    Slc(SlcPlan),
    #[cfg_attr(feature = "serde", serde(rename = "multi_plan"))]
    Multi(MultiPlan),
}

impl Plan {
    pub fn k(&self) -> usize {
        match self {
            Plan::Slc(p) => p.k,
            Plan::Multi(p) => p.k,
        }
    }
}

impl From<SlcPlan> for Plan {
    fn from(p: SlcPlan) -> Self {
        Plan::Slc(p)
    }
}

impl From<MultiPlan> for Plan {
    fn from(p: MultiPlan) -> Self {
        Plan::Multi(p)
    }
}

/// `a` with `a² = (2λ + 2)/(2λ + 3)`.
pub fn multi_stepsize(lambda: f64) -> f64 {
    libm::sqrt((2.0 * lambda + 2.0) / (2.0 * lambda + 3.0))
}

const MAX_STAGES: usize = 100_000;

/// Multi-modal trajectory for the data model `model` and smoothing `σ_tar`.
pub fn plan_multi(
    model: &Model,
    sigma_tar: f64,
    estimator: &CovEnvelopeEstimator,
    seed: u64,
) -> Result<MultiPlan> {
    if !(sigma_tar > 0.0) || !sigma_tar.is_finite() {
        return Err(invalid("sigma_tar", format!("must be positive, got {sigma_tar}")));
    }
    estimator.validate()?;
    let x_model = model.scaled(1.0 / sigma_tar)?;
    let scaled_estimator = CovEnvelopeEstimator {
        support_radius: estimator.support_radius.map(|r| r / sigma_tar),
        ..estimator.clone()
    };
    let a0 = core::f64::consts::FRAC_1_SQRT_2;
    let mut stepsizes = alloc::vec![a0];
    let mut theta_sequence = alloc::vec![0.5];
    let mut lambda_sequence = alloc::vec![0.0];
    let mut cov_envelopes = Vec::new();
    let mut envelope_modes = Vec::new();
    let mut k = 1;
    loop {
        let theta_prev = theta_sequence[k - 1];
        let env = estimate_cov_envelope(&x_model, theta_prev, &scaled_estimator, stage_seed(seed, k))?;
        if !env.value.is_finite() {
            return Err(Error::EnvelopeUnavailable(format!("envelope at stage {k} is not finite")));
        }
        let lambda = 4.0 * env.value * theta_prev;
        cov_envelopes.push(env.value);
        envelope_modes.push(env.mode);
        lambda_sequence.push(lambda);
        if 8.0 * env.value * theta_prev <= 1.0 {
            break;
        }
        if k >= MAX_STAGES {
            return Err(Error::Numerical("trajectory did not terminate".into()));
        }
        let a = multi_stepsize(lambda);
        stepsizes.push(a);
        theta_sequence.push(a * a * theta_prev);
        k += 1;
    }
    Ok(MultiPlan {
        lambda_sequence,
        stepsizes,
        theta_sequence,
        cov_envelopes,
        envelope_modes,
        k,
        early_stop: sigma_tar,
        support_radius: estimator.support_radius,
    })
}

fn stage_seed(seed: u64, k: usize) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(k as u64);
    rand::RngCore::next_u64(&mut rng)
}

/// The `u` recursion under a uniform envelope `B_max`; returns `u₀ … u_T`
/// where `u_T` is the first value `≤ 1/2`.
pub fn worst_case_trajectory(b_max: f64) -> Vec<f64> {
    let mut u = alloc::vec![2.0 * b_max];
    while u[u.len() - 1] > 0.5 {
        let prev = u[u.len() - 1];
        u.push((2.0 * prev + 2.0) / (2.0 * prev + 3.0) * prev);
    }
    u
}

/// Trajectory length under the uniform bound `B_k ≤ B_max`.
pub fn worst_case_k(b_max: f64) -> usize {
    if !(b_max >= 0.0) || !b_max.is_finite() {
        return usize::MAX;
    }
    worst_case_trajectory(b_max).len()
}
