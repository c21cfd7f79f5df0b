//! Langevin samplers for well-conditioned strongly log-concave problems.

use alloc::format;
use alloc::vec::Vec;

use rand::{Rng, RngCore};
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{check_dim, invalid, Error, Result};
use crate::linalg::Vector;
use crate::models::ScoreModel;

#[cfg(feature = "serde")]
use serde::{Deserialize, Serialize};

/// Iterates whose norm exceeds this are reported as divergence.
pub const DIVERGENCE_NORM: f64 = 1e8;
/// Constant in the iteration heuristic `C·√d·log³(1/δ)·κ`.
pub const ITERATION_CONSTANT: f64 = 20.0;
/// MALA auto step `c/(M√d)`.
pub const MALA_STEP_CONSTANT: f64 = 0.5;

/// An `(m, M)`-SLC sampling problem.
#[derive(Debug, Clone, Copy)]
pub struct SlcProblem<'a> {
    pub target: &'a dyn ScoreModel,
    pub m: f64,
    pub big_m: f64,
    /// Whether `target.log_density` may be used (for the Metropolis correction).
    pub has_log_density: bool,
}

impl<'a> SlcProblem<'a> {
    pub fn new(target: &'a dyn ScoreModel, m: f64, big_m: f64) -> Result<Self> {
        if !(m > 0.0) || !m.is_finite() {
            return Err(invalid("m", format!("must be positive, got {m}")));
        }
        if !(big_m >= m) || !big_m.is_finite() {
            return Err(invalid("M", format!("must satisfy M ≥ m, got M = {big_m}, m = {m}")));
        }
        Ok(Self {
            target,
            m,
            big_m,
            has_log_density: true,
        })
    }

    /// Same problem with only the score oracle exposed.
    pub fn score_only(self) -> Self {
        Self {
            has_log_density: false,
            ..self
        }
    }

    pub fn dim(&self) -> usize {
        self.target.dim()
    }

    pub fn kappa(&self) -> f64 {
        self.big_m / self.m
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "UPPERCASE"))]
pub enum Algorithm {
    Ula,
    #[default]
    Mala,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum StepSize {
    #[default]
    Auto,
    Fixed(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum Iterations {
    #[default]
    Auto,
    Fixed(usize),
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct SamplerConfig {
    pub algorithm: Algorithm,
    pub step: StepSize,
    pub iterations: Iterations,
    /// Target accuracy `δ`, used by `Iterations::Auto`.
    pub tolerance: f64,
    #[cfg_attr(feature = "serde", serde(default, with = "crate::serde_vec::option"))]
    pub warm_start: Option<Vector>,
    #[cfg_attr(feature = "serde", serde(default))]
    pub trace: bool,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            algorithm: Algorithm::Mala,
            step: StepSize::Auto,
            iterations: Iterations::Auto,
            tolerance: 0.1,
            warm_start: None,
            trace: false,
        }
    }
}

impl SamplerConfig {
    pub fn step_for(&self, problem: &SlcProblem<'_>) -> f64 {
        match self.step {
            StepSize::Fixed(h) => h,
            StepSize::Auto => auto_step(problem, self.algorithm),
        }
    }

    pub fn iterations_for(&self, problem: &SlcProblem<'_>) -> usize {
        match self.iterations {
            Iterations::Fixed(n) => n,
            Iterations::Auto => iterations_for(problem, self.tolerance, self.algorithm),
        }
    }
}

pub fn auto_step(problem: &SlcProblem<'_>, algorithm: Algorithm) -> f64 {
    match algorithm {
        Algorithm::Ula => 1.0 / (2.0 * problem.big_m),
        Algorithm::Mala => MALA_STEP_CONSTANT / (problem.big_m * libm::sqrt(problem.dim() as f64)),
    }
}

/// `⌈C·√d·log³(1/δ)·M/m⌉`, at least one.
pub fn iterations_for(problem: &SlcProblem<'_>, delta: f64, _algorithm: Algorithm) -> usize {
    let delta = delta.clamp(f64::MIN_POSITIVE, 1.0);
    let log_inv = libm::log(1.0 / delta);
    let n = ITERATION_CONSTANT
        * libm::sqrt(problem.dim() as f64)
        * log_inv
        * log_inv
        * log_inv
        * problem.kappa();
    // Guard against evaluating to 1 ulp above an integer.
    let n = libm::ceil(n * (1.0 - 4.0 * f64::EPSILON));
    (n as usize).max(1)
}

/// Position together with the oracle values already computed there.
#[derive(Debug, Clone, PartialEq)]
pub struct MalaState {
    pub x: Vector,
    pub log_density: f64,
    pub score: Vector,
}

impl MalaState {
    pub fn new(problem: &SlcProblem<'_>, x: Vector) -> Result<Self> {
        if !problem.has_log_density {
            return Err(Error::MissingLogDensity);
        }
        let (log_density, score) = problem.target.log_density_and_score(&x)?;
        Ok(Self { x, log_density, score })
    }
}

/// `log q(to | from)` up to a constant, for the proposal `N(from + h s, 2h I)`.
fn log_proposal(to: &Vector, from: &Vector, from_score: &Vector, h: f64) -> f64 {
    let mut r = to - from;
    r.axpy(-h, from_score, 1.0);
    -r.norm_squared() / (4.0 * h)
}

fn gaussian(d: usize, rng: &mut dyn RngCore) -> Vector {
    Vector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal))
}

/// One Metropolis-adjusted Langevin transition; costs one oracle call.
/// Returns the new state and whether the proposal was accepted.
pub fn mala_step(
    state: MalaState,
    problem: &SlcProblem<'_>,
    h: f64,
    rng: &mut dyn RngCore,
) -> Result<(MalaState, bool)> {
    if !problem.has_log_density {
        return Err(Error::MissingLogDensity);
    }
    let d = state.x.len();
    let mut proposal = state.x.clone();
    proposal.axpy(h, &state.score, 1.0);
    proposal.axpy(libm::sqrt(2.0 * h), &gaussian(d, rng), 1.0);
    let (log_density, score) = problem.target.log_density_and_score(&proposal)?;
    let log_ratio = log_density - state.log_density + log_proposal(&state.x, &proposal, &score, h)
        - log_proposal(&proposal, &state.x, &state.score, h);
    let u: f64 = rng.random();
    if log_ratio.is_finite() && libm::log(u) < log_ratio {
        Ok((
            MalaState {
                x: proposal,
                log_density,
                score,
            },
            true,
        ))
    } else {
        Ok((state, false))
    }
}

/// One unadjusted Langevin step; costs one score call.
pub fn ula_step(x: &Vector, problem: &SlcProblem<'_>, h: f64, rng: &mut dyn RngCore) -> Result<Vector> {
    let s = problem.target.score(x)?;
    let mut next = x.clone();
    next.axpy(h, &s, 1.0);
    next.axpy(libm::sqrt(2.0 * h), &gaussian(x.len(), rng), 1.0);
    Ok(next)
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct TraceRow {
    pub iteration: usize,
    /// Running acceptance rate (always 1 for ULA).
    pub acceptance: f64,
    pub norm: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SamplerOutput {
    pub sample: Vector,
    /// Oracle calls consumed.
    pub calls: usize,
    pub iterations: usize,
    pub accepted: usize,
    pub step: f64,
    pub trace: Vec<TraceRow>,
}

impl SamplerOutput {
    pub fn acceptance_rate(&self) -> f64 {
        if self.iterations == 0 {
            1.0
        } else {
            self.accepted as f64 / self.iterations as f64
        }
    }
}

fn check_divergence(x: &Vector, iteration: usize) -> Result<()> {
    let norm = x.norm();
    if !norm.is_finite() || norm > DIVERGENCE_NORM {
        return Err(Error::Divergence { iteration, norm });
    }
    Ok(())
}

/// One approximate draw for `problem`, using `rng` for all randomness.
pub fn run_sampler_with_rng(
    problem: &SlcProblem<'_>,
    config: &SamplerConfig,
    rng: &mut dyn RngCore,
) -> Result<SamplerOutput> {
    let d = problem.dim();
    let start = config.warm_start.clone().unwrap_or_else(|| Vector::zeros(d));
    check_dim(d, start.len())?;
    let h = config.step_for(problem);
    if !(h > 0.0) || !h.is_finite() {
        return Err(invalid("step", format!("must be positive, got {h}")));
    }
    let n = config.iterations_for(problem);
    if config.algorithm == Algorithm::Mala && !problem.has_log_density {
        return Err(Error::MissingLogDensity);
    }
    let mut trace = Vec::new();
    if n == 0 {
        return Ok(SamplerOutput {
            sample: start,
            calls: 0,
            iterations: 0,
            accepted: 0,
            step: h,
            trace,
        });
    }
    let mut accepted = 0;
    let (sample, calls) = match config.algorithm {
        Algorithm::Mala => {
            let mut state = MalaState::new(problem, start)?;
            for i in 1..=n {
                let (next, ok) = mala_step(state, problem, h, rng)?;
                state = next;
                accepted += ok as usize;
                check_divergence(&state.x, i)?;
                if config.trace {
                    trace.push(TraceRow {
                        iteration: i,
                        acceptance: accepted as f64 / i as f64,
                        norm: state.x.norm(),
                    });
                }
            }
            (state.x, n + 1)
        }
        Algorithm::Ula => {
            let mut x = start;
            for i in 1..=n {
                x = ula_step(&x, problem, h, rng)?;
                accepted += 1;
                check_divergence(&x, i)?;
                if config.trace {
                    trace.push(TraceRow {
                        iteration: i,
                        acceptance: 1.0,
                        norm: x.norm(),
                    });
                }
            }
            (x, n)
        }
    };
    Ok(SamplerOutput {
        sample,
        calls,
        iterations: n,
        accepted,
        step: h,
        trace,
    })
}

/// One approximate draw for `problem`, reproducible under `seed`.
pub fn run_sampler(problem: &SlcProblem<'_>, config: &SamplerConfig, seed: u64) -> Result<SamplerOutput> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    run_sampler_with_rng(problem, config, &mut rng)
}
