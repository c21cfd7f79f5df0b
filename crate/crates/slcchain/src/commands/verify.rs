use rayon::prelude::*;
use slcchain_core::budget::{allocate_budget, Distance};
use slcchain_core::diagnostics::{
    check_backward_sandwich, check_brascamp_lieb, check_error_telescoping, check_forward_sandwich, check_kl_chain,
    check_spectral_propagation, check_tweedie_second_order, check_wasserstein_contraction, CheckResult, Gaussian,
    HessianRoute, KernelConfig, KernelPerturbation, Relation, Report, STEPSIZE_PERTURBATION,
};
use slcchain_core::models::anneal;
use slcchain_core::pipeline::Trajectory;
use slcchain_core::planner::Plan;
use slcchain_core::probes::{probe_points, DEFAULT_BULK_PROBES};
use slcchain_core::{Matrix, Model, ScoreModel, Vector};

use super::RunOptions;
use crate::config::{CheckKind, ExperimentConfig};
use crate::error::{CliError, CliResult};
use crate::output;
use crate::setup::{build_plan, build_trajectory};

const TWEEDIE_PROBES: usize = 100;
const TWEEDIE_VIEWS: [(f64, f64); 3] = [(1.0, 0.5), (0.8, 0.6), (0.5, 1.0)];
const PROPAGATION_VIEWS: [(f64, f64); 3] = [(0.8, 0.6), (0.5, 0.9), (1.2, 0.3)];
const BRASCAMP_LIEB_SAMPLES: usize = 10_000;
/// Variance of the stand-in marginal used by the multi-modal contraction control.
const WIDE_VARIANCE: f64 = 1e6;

struct Suite<'a> {
    model: &'a Model,
    plan: Option<Plan>,
    trajectory: Option<Trajectory>,
    epsilon: f64,
    probes: usize,
    seed: u64,
}

fn seed_for(seed: u64, kind: usize, index: usize) -> u64 {
    seed ^ ((kind as u64) << 48) ^ (index as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

impl Suite<'_> {
    fn kernel_config(&self) -> KernelConfig {
        match self.plan {
            Some(Plan::Multi(_)) => KernelConfig::MultiModal,
            _ => KernelConfig::Slc,
        }
    }

    fn trajectory(&self) -> CliResult<&Trajectory> {
        self.trajectory
            .as_ref()
            .ok_or_else(|| CliError::Config("this check needs a plan for the model".into()))
    }

    fn with_seed(result: CheckResult, seed: u64) -> CheckResult {
        let probes = result.probes;
        result.with_probes(probes, Some(seed))
    }

    fn run(&self, kind: CheckKind) -> CliResult<Vec<CheckResult>> {
        let k_id = kind as usize;
        match kind {
            CheckKind::TweedieSecondOrder => {
                if self.model.as_mixture_ref().is_none() {
                    return Ok(Vec::new());
                }
                TWEEDIE_VIEWS
                    .iter()
                    .enumerate()
                    .map(|(i, &(a, b))| {
                        let view = anneal(self.model, a, b)?;
                        let seed = seed_for(self.seed, k_id, i);
                        let probes = probe_points(view.model(), TWEEDIE_PROBES, seed)?;
                        Ok(Self::with_seed(check_tweedie_second_order(&view, &probes)?, seed))
                    })
                    .collect()
            }
            CheckKind::SpectralPropagation => {
                let Some((m, big_m)) = self.model.slc_bounds() else {
                    return Ok(Vec::new());
                };
                PROPAGATION_VIEWS
                    .iter()
                    .enumerate()
                    .map(|(i, &(a, b))| {
                        let seed = seed_for(self.seed, k_id, i);
                        let probes = probe_points(&self.model.anneal(a, b)?, self.probes, seed)?;
                        let r = check_spectral_propagation(self.model, Some(m), Some(big_m), a, b, &probes)?;
                        Ok(Self::with_seed(r, seed))
                    })
                    .collect()
            }
            CheckKind::ForwardSandwich => {
                let traj = self.trajectory()?;
                traj.stages()
                    .map(|stage| {
                        let seed = seed_for(self.seed, k_id, stage);
                        let probes = probe_points(traj.marginal(stage), self.probes, seed)?;
                        let r = check_forward_sandwich(traj, stage, &probes, HessianRoute::Analytic)?;
                        Ok(Self::with_seed(r, seed))
                    })
                    .collect()
            }
            CheckKind::BackwardSandwich => {
                let traj = self.trajectory()?;
                let mut out = Vec::new();
                for stage in traj.first_stage()..traj.k() {
                    let seed = seed_for(self.seed, k_id, stage);
                    let probes = probe_points(traj.marginal(stage), self.probes, seed)?;
                    for perturbation in [None, Some(STEPSIZE_PERTURBATION)] {
                        let r = check_backward_sandwich(traj, stage, &probes, HessianRoute::Analytic, perturbation)?;
                        out.push(Self::with_seed(r, seed));
                    }
                }
                Ok(out)
            }
            CheckKind::WassersteinContraction => self.contraction(),
            CheckKind::KlChain => self.kl_chain(),
            CheckKind::ErrorTelescoping => self.telescoping(),
            CheckKind::BrascampLieb => {
                let Some((m, _)) = self.model.slc_bounds() else {
                    return Ok(Vec::new());
                };
                let seed = seed_for(self.seed, k_id, 0);
                let ok = check_brascamp_lieb(self.model, m, BRASCAMP_LIEB_SAMPLES, seed)?;
                let control = check_brascamp_lieb(self.model, 2.0 * m, BRASCAMP_LIEB_SAMPLES, seed)?;
                let mut control = control.negative();
                control.name = "brascamp_lieb[overstated]".into();
                Ok(vec![ok, control])
            }
        }
    }

    /// Gaussian stand-in for the marginal at a backward stage: spectrum
    /// spread over `[1, μ_k]` for SLC plans, moment match of the stage
    /// marginal for multi-modal ones.
    fn stage_gaussian(&self, traj: &Trajectory, stage: usize) -> CliResult<Gaussian> {
        let d = traj.marginal(stage).dim();
        match &self.plan {
            Some(Plan::Slc(p)) => {
                let mu = p.mu_sequence[stage];
                let spread = |i: usize| if d == 1 { mu } else { 1.0 + (mu - 1.0) * i as f64 / (d - 1) as f64 };
                let cov = Matrix::from_diagonal(&Vector::from_fn(d, |i, _| 1.0 / spread(i)));
                Ok(Gaussian::new(Vector::zeros(d), cov)?)
            }
            _ => {
                let mix = traj
                    .marginal(stage)
                    .as_mixture_ref()
                    .ok_or_else(|| CliError::Config("multi-modal stages must be mixtures".into()))?;
                Ok(Gaussian::new(mix.mean(), mix.covariance())?)
            }
        }
    }

    fn contraction(&self) -> CliResult<Vec<CheckResult>> {
        let traj = self.trajectory()?;
        let config = self.kernel_config();
        let mut out = Vec::new();
        for stage in traj.first_stage()..traj.k() {
            let a = traj.stepsize(stage);
            let marginal = self.stage_gaussian(traj, stage)?;
            let d = marginal.dim();
            let unit = Gaussian::standard(d);
            let mut pairs: Vec<(Gaussian, Gaussian)> = (0..d)
                .map(|i| {
                    let mut e = Vector::zeros(d);
                    e[i] = 1.0;
                    (unit.clone(), unit.shifted(&e))
                })
                .collect();
            pairs.push((unit.clone(), Gaussian::new(Vector::zeros(d), Matrix::identity(d, d) * 2.0)?));
            out.push(check_wasserstein_contraction(&marginal, a, &pairs, config, None)?);
            let control = match config {
                KernelConfig::Slc => {
                    check_wasserstein_contraction(&unit, a, &pairs, config, Some(STEPSIZE_PERTURBATION))?
                }
                KernelConfig::MultiModal => {
                    let wide = Gaussian::new(Vector::zeros(d), Matrix::identity(d, d) * WIDE_VARIANCE)?;
                    check_wasserstein_contraction(&wide, a, &pairs, config, Some(-STEPSIZE_PERTURBATION))?
                }
            };
            out.push(control);
        }
        Ok(out)
    }

    fn kl_chain(&self) -> CliResult<Vec<CheckResult>> {
        let traj = self.trajectory()?;
        let mut out = Vec::new();
        for stage in traj.first_stage()..traj.k() {
            let a = traj.stepsize(stage);
            let marginal = self.stage_gaussian(traj, stage)?;
            let d = marginal.dim();
            let p_next = marginal.forward(a);
            let perturbation = KernelPerturbation {
                shift: Vector::from_element(d, 0.05),
                extra_var: 0.01,
            };
            let q_next = p_next.shifted(&Vector::from_element(d, 0.3));
            out.push(check_kl_chain(&q_next, &marginal, a, &perturbation)?.with_detail("stage", stage as f64));
            // Dropping the stage error from the bound must break it.
            let exact_input = check_kl_chain(&p_next, &marginal, a, &perturbation)?;
            let control = CheckResult::new(
                "kl_chain[stage_error_dropped]",
                exact_input.measured,
                Relation::AtMost,
                exact_input.details["kl_next"],
                1e-12,
            )
            .with_detail("stage", stage as f64)
            .negative();
            out.push(control);
        }
        Ok(out)
    }

    fn telescoping(&self) -> CliResult<Vec<CheckResult>> {
        let traj = self.trajectory()?;
        let plan = self.plan.as_ref().expect("trajectory implies plan");
        let first = traj.first_stage();
        let marginal = self.stage_gaussian(traj, first)?;
        let stepsizes: Vec<f64> = (first..traj.k()).map(|s| traj.stepsize(s)).collect();
        let direction = Vector::from_element(marginal.dim(), 1.0);
        let config = self.kernel_config();
        let mut out = Vec::new();
        for distance in [Distance::W2, Distance::Kl] {
            let budget = allocate_budget(plan.k(), self.epsilon, distance, plan)?;
            let r = check_error_telescoping(&marginal, &stepsizes, &budget.deltas, &direction, distance, config)?;
            if stepsizes.is_empty() {
                out.push(r);
                continue;
            }
            let control = CheckResult::new(
                format!("{}[first_stage_only]", r.name),
                r.measured,
                Relation::AtMost,
                budget.deltas[0],
                1e-12,
            )
            .negative();
            out.push(r);
            out.push(control);
        }
        Ok(out)
    }
}

/// Runs the configured checks (all applicable ones by default) and writes
/// `report.json`. Fails with [`CliError::ChecksFailed`] when a check that
/// is not a negative control fails.
pub fn cmd_verify(config: &ExperimentConfig, opts: &RunOptions) -> CliResult<Report> {
    let model = config.model.build()?;
    let explicit = config.checks.is_some();
    let kinds: Vec<CheckKind> = config.checks.clone().unwrap_or_else(|| CheckKind::ALL.to_vec());

    let needs_plan = kinds.iter().any(|k| {
        matches!(
            k,
            CheckKind::ForwardSandwich
                | CheckKind::BackwardSandwich
                | CheckKind::WassersteinContraction
                | CheckKind::KlChain
                | CheckKind::ErrorTelescoping
        )
    });
    let (plan, trajectory) = if needs_plan {
        match build_plan(config, &model, opts.seed) {
            Ok(plan) => {
                let traj = build_trajectory(config, &model, &plan)?;
                (Some(plan), Some(traj))
            }
            Err(e) if explicit => return Err(e),
            Err(_) => (None, None),
        }
    } else {
        (None, None)
    };
    let suite = Suite {
        model: &model,
        plan,
        trajectory,
        epsilon: config.epsilon,
        probes: config.probes.unwrap_or(DEFAULT_BULK_PROBES),
        seed: opts.seed,
    };

    let results: Vec<CliResult<Vec<CheckResult>>> = opts.pool()?.install(|| {
        kinds
            .par_iter()
            .map(|&kind| {
                if suite.trajectory.is_none() && !explicit && needs_trajectory(kind) {
                    return Ok(Vec::new());
                }
                suite.run(kind)
            })
            .collect()
    });
    let mut checks = Vec::new();
    for r in results {
        checks.extend(r?);
    }
    if config.inject_violation {
        for c in &mut checks {
            c.negative_control = false;
        }
    }
    let report = Report { checks };
    output::write_json(&opts.out.join("report.json"), &report)?;
    let failed: Vec<String> = report.failures().map(|c| c.name.clone()).collect();
    if failed.is_empty() {
        Ok(report)
    } else {
        Err(CliError::ChecksFailed(failed))
    }
}

fn needs_trajectory(kind: CheckKind) -> bool {
    !matches!(
        kind,
        CheckKind::TweedieSecondOrder | CheckKind::SpectralPropagation | CheckKind::BrascampLieb
    )
}
