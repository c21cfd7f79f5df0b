use slcchain_core::planner::Plan;

use super::RunOptions;
use crate::config::ExperimentConfig;
use crate::error::CliResult;
use crate::output;
use crate::setup::build_plan;

/// Builds the plan and writes it to `plan.json`.
pub fn cmd_plan(config: &ExperimentConfig, opts: &RunOptions) -> CliResult<Plan> {
    let model = config.model.build()?;
    let plan = build_plan(config, &model, opts.seed)?;
    output::write_json(&opts.out.join("plan.json"), &plan)?;
    Ok(plan)
}
