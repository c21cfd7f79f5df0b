//! Experiment configuration files.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use slcchain_core::budget::Distance;
use slcchain_core::planner::{CovEnvelopeEstimator, EnvelopeMode};
use slcchain_core::sampler::{Algorithm, Iterations, SamplerConfig, StepSize};

use crate::error::{CliError, CliResult};
use crate::model_spec::ModelSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Slc,
    Multi,
    Diagnostics,
    Figure1,
}

/// Overrides of the per-stage sampler; unset fields keep their defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplerOverrides {
    #[serde(default)]
    pub algorithm: Option<Algorithm>,
    #[serde(default)]
    pub step: Option<f64>,
    #[serde(default)]
    pub iterations: Option<usize>,
}

impl SamplerOverrides {
    pub fn config(&self) -> SamplerConfig {
        let mut c = SamplerConfig::default();
        if let Some(a) = self.algorithm {
            c.algorithm = a;
        }
        if let Some(h) = self.step {
            c.step = StepSize::Fixed(h);
        }
        if let Some(n) = self.iterations {
            c.iterations = Iterations::Fixed(n);
        }
        c
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimatorSpec {
    #[serde(default = "default_envelope_mode")]
    pub mode: EnvelopeMode,
    #[serde(default)]
    pub probes: Option<usize>,
    #[serde(default)]
    pub safety_factor: Option<f64>,
    #[serde(default)]
    pub support_radius: Option<f64>,
}

fn default_envelope_mode() -> EnvelopeMode {
    EnvelopeMode::MonteCarloSup
}

impl EstimatorSpec {
    pub fn estimator(&self) -> CliResult<CovEnvelopeEstimator> {
        let mut e = match self.mode {
            EnvelopeMode::AnalyticBound => {
                let r = self.support_radius.ok_or_else(|| {
                    CliError::Config("analytic envelope needs `support_radius`".into())
                })?;
                CovEnvelopeEstimator::analytic(r)
            }
            EnvelopeMode::MonteCarloSup => CovEnvelopeEstimator {
                support_radius: self.support_radius,
                ..CovEnvelopeEstimator::default()
            },
        };
        if let Some(p) = self.probes {
            e.probes = p;
        }
        if let Some(s) = self.safety_factor {
            e.safety_factor = s;
        }
        Ok(e)
    }
}

/// Names of the checks run by `verify`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckKind {
    TweedieSecondOrder,
    SpectralPropagation,
    ForwardSandwich,
    BackwardSandwich,
    WassersteinContraction,
    KlChain,
    ErrorTelescoping,
    BrascampLieb,
}

impl CheckKind {
    pub const ALL: [CheckKind; 8] = [
        CheckKind::TweedieSecondOrder,
        CheckKind::SpectralPropagation,
        CheckKind::ForwardSandwich,
        CheckKind::BackwardSandwich,
        CheckKind::WassersteinContraction,
        CheckKind::KlChain,
        CheckKind::ErrorTelescoping,
        CheckKind::BrascampLieb,
    ];
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelSpec,
    pub mode: Mode,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default)]
    pub distance: Distance,
    #[serde(default)]
    pub sigma_tar: Option<f64>,
    #[serde(default = "default_n")]
    pub n: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub sampler: SamplerOverrides,
    #[serde(default)]
    pub estimator: Option<EstimatorSpec>,
    /// Checks run by `verify`; all applicable ones when absent.
    #[serde(default)]
    pub checks: Option<Vec<CheckKind>>,
    /// Report negative controls as ordinary checks, so that they fail the run.
    #[serde(default)]
    pub inject_violation: bool,
    /// Probe count for sup-type checks.
    #[serde(default)]
    pub probes: Option<usize>,
    /// Grid resolution for `figure1`.
    #[serde(default)]
    pub resolution: Option<usize>,
}

fn default_epsilon() -> f64 {
    0.1
}

fn default_n() -> usize {
    1
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> CliResult<Self> {
        let config: Self = serde_json::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> CliResult<()> {
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return Err(CliError::Config(format!("epsilon must lie in (0, 1), got {}", self.epsilon)));
        }
        if self.n == 0 {
            return Err(CliError::Config("n must be at least 1".into()));
        }
        if self.mode == Mode::Multi && self.sigma_tar.is_none() {
            return Err(CliError::Config("multi mode needs `sigma_tar`".into()));
        }
        if let Some(s) = self.sigma_tar {
            if !(s > 0.0 && s.is_finite()) {
                return Err(CliError::Config(format!("sigma_tar must be positive, got {s}")));
            }
        }
        if let Some(r) = self.resolution {
            if r < 2 {
                return Err(CliError::Config("resolution must be at least 2".into()));
            }
        }
        Ok(())
    }

    pub fn estimator(&self) -> CliResult<CovEnvelopeEstimator> {
        self.estimator
            .as_ref()
            .map_or_else(|| Ok(CovEnvelopeEstimator::default()), EstimatorSpec::estimator)
    }

    pub fn sampler_config(&self) -> SamplerConfig {
        self.sampler.config()
    }
}
