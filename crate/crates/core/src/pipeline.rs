//! Backward traversal: sample the terminal marginal, then each backward
//! conditional in turn, and map the result back to the target's units.

use alloc::format;
use alloc::vec::Vec;

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::budget::StageBudget;
use crate::error::{Error, Result};
use crate::linalg::Vector;
use crate::models::{BackwardConditional, Model, ScoreModel};
use crate::planner::{MultiPlan, Plan, SlcPlan};
use crate::sampler::{self, Iterations, SamplerConfig, SlcProblem, StepSize, TraceRow};

#[cfg(feature = "serde")]
use serde::{Deserialize, Serialize};

/// Stage tolerances above this are clamped before choosing iteration counts.
pub const MAX_STAGE_DELTA: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum StageRole {
    Terminal,
    Backward,
}

/// The sampler settings actually used for one stage.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct StageSettings {
    pub stage: usize,
    pub role: StageRole,
    pub m: f64,
    #[cfg_attr(feature = "serde", serde(rename = "M"))]
    pub big_m: f64,
    pub delta: f64,
    pub step: f64,
    pub iterations: usize,
    pub algorithm: sampler::Algorithm,
    /// `a_k` tethering a backward stage to the later one.
    pub tether_scale: Option<f64>,
}

/// One backward trajectory: the output draw and per-stage accounting, in
/// execution order (terminal first).
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct TrajectoryRecord {
    pub index: u64,
    #[cfg_attr(feature = "serde", serde(with = "crate::serde_vec"))]
    pub sample: Vector,
    pub stage_calls: Vec<usize>,
    pub stage_acceptance: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct RunRecord {
    pub plan: Plan,
    pub budget: StageBudget,
    pub stages: Vec<StageSettings>,
    pub seed: u64,
    pub trajectories: Vec<TrajectoryRecord>,
}

impl RunRecord {
    pub fn samples(&self) -> Vec<Vector> {
        self.trajectories.iter().map(|t| t.sample.clone()).collect()
    }

    /// Calls per stage summed over trajectories, in execution order.
    pub fn stage_calls(&self) -> Vec<usize> {
        let mut totals = alloc::vec![0; self.stages.len()];
        for t in &self.trajectories {
            for (acc, c) in totals.iter_mut().zip(&t.stage_calls) {
                *acc += c;
            }
        }
        totals
    }

    pub fn mean_acceptance(&self) -> Vec<f64> {
        let n = self.trajectories.len().max(1) as f64;
        let mut means = alloc::vec![0.0; self.stages.len()];
        for t in &self.trajectories {
            for (acc, a) in means.iter_mut().zip(&t.stage_acceptance) {
                *acc += a / n;
            }
        }
        means
    }
}

/// Sum of all per-stage call counts.
pub fn total_calls(record: &RunRecord) -> usize {
    record.stage_calls().iter().sum()
}

/// Seed of trajectory `index`: stream `index` of the master ChaCha8 seed.
pub fn trajectory_rng(master: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(index);
    rng
}

/// Sampler trace of one stage of one trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct StageTrace {
    pub stage: usize,
    pub rows: Vec<TraceRow>,
}

/// The stage marginals of a forward trajectory together with its sandwich
/// bounds, in the chain's working units.
#[derive(Debug, Clone)]
pub struct Trajectory {
    plan: Plan,
    /// `marginals[i]` is the law of `Y_{first + i}`.
    marginals: Vec<Model>,
    first: usize,
    output_scale: f64,
}

fn relative_mismatch(a: f64, b: f64) -> bool {
    (a - b).abs() > 1e-9 * a.abs().max(b.abs())
}

impl Trajectory {
    /// Stages `0..=K` of an SLC target in the rescaled units `√m·X`.
    pub fn slc(model: &Model, plan: &SlcPlan) -> Result<Self> {
        let (m, big_m) = model
            .slc_bounds()
            .ok_or_else(|| Error::PlanMismatch("model has no certified SLC constants".into()))?;
        if relative_mismatch(m, plan.m) || relative_mismatch(big_m, plan.big_m) {
            return Err(Error::PlanMismatch(format!(
                "model has (m, M) = ({m}, {big_m}), plan was built for ({}, {})",
                plan.m, plan.big_m
            )));
        }
        let rescaled = model.scaled(plan.rescale_factor)?;
        let marginals = (0..=plan.k)
            .map(|k| {
                let (alpha, beta) = plan.stage_signal_noise(k);
                rescaled.anneal(alpha, beta)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            plan: Plan::Slc(plan.clone()),
            marginals,
            first: 0,
            output_scale: 1.0 / plan.rescale_factor,
        })
    }

    /// Stages `1..=K` for `Z = X_data + σ_tar W`, in the units of `Y₁ = Z/(√2 σ_tar)`.
    pub fn multi(model: &Model, sigma_tar: f64, plan: &MultiPlan) -> Result<Self> {
        if relative_mismatch(sigma_tar, plan.early_stop) {
            return Err(Error::PlanMismatch(format!(
                "plan was built for σ_tar = {}, got {sigma_tar}",
                plan.early_stop
            )));
        }
        if model.as_mixture_ref().is_none() {
            return Err(Error::PlanMismatch("multi-modal pipeline needs a mixture target".into()));
        }
        let x_model = model.scaled(1.0 / sigma_tar)?;
        let marginals = (1..=plan.k)
            .map(|k| {
                let (theta, noise) = plan.stage_signal_noise(k);
                x_model.anneal(theta, noise)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            plan: Plan::Multi(plan.clone()),
            marginals,
            first: 1,
            output_scale: core::f64::consts::SQRT_2 * sigma_tar,
        })
    }

    pub fn plan(&self) -> &Plan {
        &self.plan
    }

    pub fn k(&self) -> usize {
        self.plan.k()
    }

    pub fn first_stage(&self) -> usize {
        self.first
    }

    /// Stage indices `first..=K`.
    pub fn stages(&self) -> core::ops::RangeInclusive<usize> {
        self.first..=self.k()
    }

    /// Law of `Y_stage`.
    pub fn marginal(&self, stage: usize) -> &Model {
        &self.marginals[stage - self.first]
    }

    /// `a_stage`, tethering `Y_stage` to `Y_{stage+1}`.
    pub fn stepsize(&self, stage: usize) -> f64 {
        match &self.plan {
            Plan::Slc(p) => p.stepsizes[stage],
            Plan::Multi(p) => p.stepsizes[stage],
        }
    }

    /// Factor mapping the first stage's variable to the target's units.
    pub fn output_scale(&self) -> f64 {
        self.output_scale
    }

    /// Sandwich of the forward marginal at `stage`.
    pub fn marginal_bounds(&self, stage: usize) -> (f64, f64) {
        match &self.plan {
            Plan::Slc(p) => p.marginal_bounds(stage),
            Plan::Multi(p) => p.marginal_bounds(stage),
        }
    }

    /// Sandwich of the backward conditional at `stage < K`.
    pub fn backward_bounds(&self, stage: usize) -> (f64, f64) {
        match &self.plan {
            Plan::Slc(p) => p.backward_bounds(stage),
            Plan::Multi(p) => p.backward_bounds(stage),
        }
    }

    pub fn terminal_bounds(&self) -> (f64, f64) {
        self.marginal_bounds(self.k())
    }
}

/// A trajectory with per-stage sampler settings, ready to run.
#[derive(Debug, Clone)]
pub struct Chain {
    trajectory: Trajectory,
    budget: StageBudget,
    settings: Vec<StageSettings>,
    sampler: SamplerConfig,
    terminal_start: Vector,
}

fn stage_settings(
    stage: usize,
    role: StageRole,
    bounds: (f64, f64),
    delta: f64,
    tether_scale: Option<f64>,
    target: &dyn ScoreModel,
    sampler: &SamplerConfig,
) -> Result<StageSettings> {
    let problem = SlcProblem::new(target, bounds.0, bounds.1)?;
    let config = SamplerConfig {
        tolerance: delta.min(MAX_STAGE_DELTA),
        ..sampler.clone()
    };
    Ok(StageSettings {
        stage,
        role,
        m: bounds.0,
        big_m: bounds.1,
        delta,
        step: config.step_for(&problem),
        iterations: config.iterations_for(&problem),
        algorithm: sampler.algorithm,
        tether_scale,
    })
}

impl Chain {
    pub fn new(trajectory: Trajectory, budget: &StageBudget, sampler: &SamplerConfig) -> Result<Self> {
        let k = trajectory.k();
        let expected: Vec<usize> = trajectory.stages().collect();
        if budget.stages != expected {
            return Err(Error::PlanMismatch(format!(
                "budget covers stages {:?}, plan needs {:?}",
                budget.stages, expected
            )));
        }
        let terminal = trajectory.marginal(k);
        let mut settings = Vec::with_capacity(expected.len());
        settings.push(stage_settings(
            k,
            StageRole::Terminal,
            trajectory.terminal_bounds(),
            budget.delta_for(k).expect("budget covers the terminal stage"),
            None,
            terminal,
            sampler,
        )?);
        let probe = Vector::zeros(terminal.dim());
        for stage in expected[..expected.len() - 1].iter().rev().copied() {
            let a = trajectory.stepsize(stage);
            let cond = BackwardConditional::new(trajectory.marginal(stage), a, &probe)?;
            settings.push(stage_settings(
                stage,
                StageRole::Backward,
                trajectory.backward_bounds(stage),
                budget.delta_for(stage).expect("budget covers every stage"),
                Some(a),
                &cond,
                sampler,
            )?);
        }
        let terminal_start = terminal
            .as_mixture()
            .map(|m| m.mean())
            .unwrap_or_else(|| Vector::zeros(terminal.dim()));
        Ok(Self {
            trajectory,
            budget: budget.clone(),
            settings,
            sampler: sampler.clone(),
            terminal_start,
        })
    }

    pub fn trajectory(&self) -> &Trajectory {
        &self.trajectory
    }

    pub fn budget(&self) -> &StageBudget {
        &self.budget
    }

    /// Settings in execution order, terminal stage first.
    pub fn settings(&self) -> &[StageSettings] {
        &self.settings
    }

    fn config_for(&self, s: &StageSettings, warm_start: Vector, trace: bool) -> SamplerConfig {
        SamplerConfig {
            step: StepSize::Fixed(s.step),
            iterations: Iterations::Fixed(s.iterations),
            tolerance: s.delta.min(MAX_STAGE_DELTA),
            warm_start: Some(warm_start),
            trace,
            ..self.sampler.clone()
        }
    }

    /// Runs trajectory `index` with randomness from stream `index` of `seed`;
    /// the recorded sample is in the target's units.
    pub fn run_trajectory(&self, seed: u64, index: u64) -> Result<TrajectoryRecord> {
        self.run_inner(seed, index, self.sampler.trace).map(|(record, _)| record)
    }

    /// As [`Chain::run_trajectory`], also returning the sampler trace of every
    /// stage in execution order. The draws are identical to the untraced run.
    pub fn run_trajectory_traced(&self, seed: u64, index: u64) -> Result<(TrajectoryRecord, Vec<StageTrace>)> {
        self.run_inner(seed, index, true)
    }

    fn run_inner(&self, seed: u64, index: u64, trace: bool) -> Result<(TrajectoryRecord, Vec<StageTrace>)> {
        let mut rng = trajectory_rng(seed, index);
        let mut stage_calls = Vec::with_capacity(self.settings.len());
        let mut stage_acceptance = Vec::with_capacity(self.settings.len());
        let mut traces = Vec::new();

        let terminal = &self.settings[0];
        let target = self.trajectory.marginal(terminal.stage);
        let problem = SlcProblem::new(target, terminal.m, terminal.big_m)?;
        let config = self.config_for(terminal, self.terminal_start.clone(), trace);
        let out = sampler::run_sampler_with_rng(&problem, &config, &mut rng)?;
        stage_calls.push(out.calls);
        stage_acceptance.push(out.acceptance_rate());
        if trace {
            traces.push(StageTrace { stage: terminal.stage, rows: out.trace });
        }
        let mut y = out.sample;

        for s in &self.settings[1..] {
            let a = self.trajectory.stepsize(s.stage);
            let cond = BackwardConditional::new(self.trajectory.marginal(s.stage), a, &y)?;
            let problem = SlcProblem::new(&cond, s.m, s.big_m)?;
            let config = self.config_for(s, cond.warm_start(), trace);
            let out = sampler::run_sampler_with_rng(&problem, &config, &mut rng)?;
            stage_calls.push(out.calls);
            stage_acceptance.push(out.acceptance_rate());
            if trace {
                traces.push(StageTrace { stage: s.stage, rows: out.trace });
            }
            y = out.sample;
        }
        let record = TrajectoryRecord {
            index,
            sample: y * self.trajectory.output_scale(),
            stage_calls,
            stage_acceptance,
        };
        Ok((record, traces))
    }

    /// Assembles a record from trajectories produced by `run_trajectory`.
    pub fn record(&self, seed: u64, trajectories: Vec<TrajectoryRecord>) -> RunRecord {
        RunRecord {
            plan: self.trajectory.plan().clone(),
            budget: self.budget.clone(),
            stages: self.settings.clone(),
            seed,
            trajectories,
        }
    }

    /// `n` independent trajectories, serially.
    pub fn run(&self, n: usize, seed: u64) -> Result<RunRecord> {
        let trajectories = (0..n as u64)
            .map(|i| self.run_trajectory(seed, i))
            .collect::<Result<Vec<_>>>()?;
        Ok(self.record(seed, trajectories))
    }
}

/// Chain for an SLC target in the rescaled units `√m·X`.
pub fn slc_chain(model: &Model, plan: &SlcPlan, budget: &StageBudget, sampler: &SamplerConfig) -> Result<Chain> {
    Chain::new(Trajectory::slc(model, plan)?, budget, sampler)
}

/// Chain for `Z = X_data + σ_tar W` in the units of `Y₁ = Z/(√2 σ_tar)`.
pub fn multi_chain(
    model: &Model,
    sigma_tar: f64,
    plan: &MultiPlan,
    budget: &StageBudget,
    sampler: &SamplerConfig,
) -> Result<Chain> {
    Chain::new(Trajectory::multi(model, sigma_tar, plan)?, budget, sampler)
}

/// `n` draws approximating an SLC target, in its original units.
pub fn sample_slc_pipeline(
    model: &Model,
    plan: &SlcPlan,
    budget: &StageBudget,
    sampler: &SamplerConfig,
    n: usize,
    seed: u64,
) -> Result<RunRecord> {
    slc_chain(model, plan, budget, sampler)?.run(n, seed)
}

/// `n` draws approximating `X_data + σ_tar W`.
pub fn sample_multi_pipeline(
    model: &Model,
    sigma_tar: f64,
    plan: &MultiPlan,
    budget: &StageBudget,
    sampler: &SamplerConfig,
    n: usize,
    seed: u64,
) -> Result<RunRecord> {
    multi_chain(model, sigma_tar, plan, budget, sampler)?.run(n, seed)
}
