//! JSON model definitions.

use serde::{Deserialize, Serialize};
use slcchain_core::models::{bundled, GaussianMixture, SlcQuadraticPlus};
use slcchain_core::{Matrix, Model, Vector};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ModelSpec {
    GaussianMixture {
        weights: Vec<f64>,
        means: Vec<Vec<f64>>,
        covs: Vec<Vec<Vec<f64>>>,
    },
    SlcQuadraticPlus {
        precision: Vec<Vec<f64>>,
        amplitude: f64,
        frequency: Vec<f64>,
    },
    /// One of the bundled targets: `bimodal`, `trimodal`,
    /// `anisotropic_gaussian` (with `kappa`) or `rippled_quadratic`.
    Bundled {
        name: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        kappa: Option<f64>,
    },
}

fn matrix(rows: &[Vec<f64>], what: &str) -> CliResult<Matrix> {
    let n = rows.len();
    if rows.iter().any(|r| r.len() != n) {
        return Err(CliError::Config(format!("{what} must be a square array of rows")));
    }
    Ok(Matrix::from_fn(n, n, |i, j| rows[i][j]))
}

fn rows(m: &Matrix) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

impl ModelSpec {
    pub fn build(&self) -> CliResult<Model> {
        Ok(match self {
            ModelSpec::GaussianMixture { weights, means, covs } => {
                let means = means.iter().map(|m| Vector::from_vec(m.clone())).collect();
                let covs = covs
                    .iter()
                    .map(|c| matrix(c, "covs[i]"))
                    .collect::<CliResult<Vec<_>>>()?;
                Model::from(GaussianMixture::new(weights.clone(), means, covs)?)
            }
            ModelSpec::SlcQuadraticPlus {
                precision,
                amplitude,
                frequency,
            } => Model::from(SlcQuadraticPlus::new(
                matrix(precision, "precision")?,
                *amplitude,
                Vector::from_vec(frequency.clone()),
            )?),
            ModelSpec::Bundled { name, kappa } => match (name.as_str(), kappa) {
                ("bimodal", None) => bundled::bimodal().into(),
                ("trimodal", None) => bundled::trimodal().into(),
                ("rippled_quadratic", None) => bundled::rippled_quadratic().into(),
                ("anisotropic_gaussian", Some(k)) => bundled::anisotropic_gaussian(*k).into(),
                ("anisotropic_gaussian", None) => {
                    return Err(CliError::Config("anisotropic_gaussian needs `kappa`".into()))
                }
                (other, _) => return Err(CliError::Config(format!("unknown bundled model `{other}`"))),
            },
        })
    }

    /// The explicit definition of a mixture, e.g. to record a bundled model.
    pub fn from_mixture(mix: &GaussianMixture) -> Self {
        ModelSpec::GaussianMixture {
            weights: mix.weights().to_vec(),
            means: mix.means().iter().map(|m| m.iter().copied().collect()).collect(),
            covs: mix.covs().iter().map(rows).collect(),
        }
    }
}
