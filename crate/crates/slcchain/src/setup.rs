//! Plans and chains from an experiment config.

use slcchain_core::budget::allocate_budget;
use slcchain_core::pipeline::{Chain, Trajectory};
use slcchain_core::planner::{plan_multi, plan_slc, Plan};
use slcchain_core::Model;

use crate::config::{ExperimentConfig, Mode};
use crate::error::{CliError, CliResult};

/// Which reduction a config asks for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Reduction {
    Slc,
    Multi,
}

pub fn reduction(config: &ExperimentConfig, model: &Model) -> CliResult<Reduction> {
    match config.mode {
        Mode::Slc => Ok(Reduction::Slc),
        Mode::Multi => Ok(Reduction::Multi),
        Mode::Diagnostics => {
            if config.sigma_tar.is_some() && model.as_mixture_ref().is_some() {
                Ok(Reduction::Multi)
            } else if model.slc_bounds().is_some() {
                Ok(Reduction::Slc)
            } else {
                Err(CliError::Config(
                    "diagnostics on a model without SLC constants need a mixture and `sigma_tar`".into(),
                ))
            }
        }
        Mode::Figure1 => Err(CliError::Config("figure1 mode does not define a plan".into())),
    }
}

pub fn build_plan(config: &ExperimentConfig, model: &Model, seed: u64) -> CliResult<Plan> {
    match reduction(config, model)? {
        Reduction::Slc => {
            let (m, big_m) = model
                .slc_bounds()
                .ok_or_else(|| CliError::Config("slc mode needs a model with certified (m, M)".into()))?;
            Ok(plan_slc(m, big_m)?.into())
        }
        Reduction::Multi => {
            let sigma = config
                .sigma_tar
                .ok_or_else(|| CliError::Config("multi-modal plan needs `sigma_tar`".into()))?;
            Ok(plan_multi(model, sigma, &config.estimator()?, seed)?.into())
        }
    }
}

pub fn build_trajectory(config: &ExperimentConfig, model: &Model, plan: &Plan) -> CliResult<Trajectory> {
    Ok(match plan {
        Plan::Slc(p) => Trajectory::slc(model, p)?,
        Plan::Multi(p) => {
            let sigma = config
                .sigma_tar
                .ok_or_else(|| CliError::Config("multi-modal plan needs `sigma_tar`".into()))?;
            Trajectory::multi(model, sigma, p)?
        }
    })
}

pub fn build_chain(config: &ExperimentConfig, model: &Model, plan: &Plan) -> CliResult<Chain> {
    let trajectory = build_trajectory(config, model, plan)?;
    let budget = allocate_budget(plan.k(), config.epsilon, config.distance, plan)?;
    Ok(Chain::new(trajectory, &budget, &config.sampler_config())?)
}
