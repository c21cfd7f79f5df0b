use rayon::prelude::*;
use serde::Serialize;
use slcchain_core::budget::StageBudget;
use slcchain_core::pipeline::{total_calls, StageRole, TrajectoryRecord};
use slcchain_core::planner::Plan;

use super::RunOptions;
use crate::config::{ExperimentConfig, Mode};
use crate::error::{CliError, CliResult};
use crate::output;
use crate::setup::{build_chain, build_plan};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StageSummary {
    pub stage: usize,
    pub role: StageRole,
    pub m: f64,
    #[serde(rename = "M")]
    pub big_m: f64,
    pub delta: f64,
    pub step: f64,
    pub iterations: usize,
    pub calls: usize,
    pub mean_acceptance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SampleSummary {
    pub n: usize,
    pub seed: u64,
    pub total_calls: usize,
    /// Stages in execution order, terminal first.
    pub stages: Vec<StageSummary>,
    pub plan: Plan,
    pub budget: StageBudget,
}

/// Draws `config.n` samples, writing `samples.jsonl`, `summary.json` and,
/// with `trace`, the sampler trace of trajectory 0 as `trace.csv`.
pub fn cmd_sample(config: &ExperimentConfig, opts: &RunOptions, trace: bool) -> CliResult<SampleSummary> {
    if !matches!(config.mode, Mode::Slc | Mode::Multi) {
        return Err(CliError::Config("sample needs mode `slc` or `multi`".into()));
    }
    let model = config.model.build()?;
    let plan = build_plan(config, &model, opts.seed)?;
    let chain = build_chain(config, &model, &plan)?;
    let seed = opts.seed;
    let trajectories: Vec<TrajectoryRecord> = opts.pool()?.install(|| {
        (0..config.n as u64)
            .into_par_iter()
            .map(|i| chain.run_trajectory(seed, i))
            .collect::<Result<Vec<_>, _>>()
    })?;
    let record = chain.record(seed, trajectories);

    let n = record.trajectories.len();
    let calls = record.stage_calls();
    let acceptance = record.mean_acceptance();
    let stages = chain
        .settings()
        .iter()
        .enumerate()
        .map(|(i, s)| StageSummary {
            stage: s.stage,
            role: s.role,
            m: s.m,
            big_m: s.big_m,
            delta: s.delta,
            step: s.step,
            iterations: s.iterations,
            calls: calls[i],
            mean_acceptance: acceptance[i],
        })
        .collect();
    let summary = SampleSummary {
        n,
        seed,
        total_calls: total_calls(&record),
        stages,
        plan: record.plan.clone(),
        budget: record.budget.clone(),
    };

    output::write_jsonl(&opts.out.join("samples.jsonl"), &record.trajectories)?;
    output::write_json(&opts.out.join("summary.json"), &summary)?;
    if trace {
        write_trace(&chain, seed, &opts.out.join("trace.csv"))?;
    }
    Ok(summary)
}

fn write_trace(chain: &slcchain_core::pipeline::Chain, seed: u64, path: &std::path::Path) -> CliResult<()> {
    let (_, traces) = chain.run_trajectory_traced(seed, 0)?;
    let mut w = output::csv_writer(path)?;
    w.write_record(["trajectory", "stage", "iteration", "acceptance", "norm"])
        .map_err(|e| output::csv_error(path, e))?;
    for t in traces {
        for row in t.rows {
            w.serialize((0u64, t.stage, row.iteration, row.acceptance, row.norm))
                .map_err(|e| output::csv_error(path, e))?;
        }
    }
    w.flush().map_err(|e| CliError::io(path, e))
}
