use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use slcchain_core::models::{BackwardConditional, GaussianMixture, ScoreModel};
use slcchain_core::{Model, Vector};

use super::RunOptions;
use crate::config::ExperimentConfig;
use crate::error::{CliError, CliResult};
use crate::output;

/// Signal levels of the five illustrated marginals, `Y_k = θ_k X + √(1−θ_k²) W`.
pub const THETAS: [f64; 5] = [1.0, 0.93, 0.85, 0.78, 0.60];
pub const DEFAULT_RESOLUTION: usize = 101;
pub const REALIZATIONS: usize = 3;
const BOX_SIGMAS: f64 = 3.0;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Panel {
    pub label: String,
    pub density: PathBuf,
    pub score: PathBuf,
    /// Conditioning value `Y_{k+1}` for backward panels.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub given: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FigureManifest {
    pub thetas: Vec<f64>,
    /// Per-step factors `θ_{k+1}/θ_k` of the Markov forward chain.
    pub stepsizes: Vec<f64>,
    pub resolution: usize,
    pub half_width: f64,
    pub seed: u64,
    pub marginals: Vec<Panel>,
    /// `REALIZATIONS` backward sequences, each with panels for `k = 1..4`.
    pub conditionals: Vec<Vec<Panel>>,
}

fn grid_half_width(mix: &GaussianMixture) -> f64 {
    mix.means()
        .iter()
        .zip(mix.covs())
        .map(|(m, c)| m.amax() + BOX_SIGMAS * slcchain_core::linalg::sym_op_norm(c).sqrt())
        .fold(0.0, f64::max)
}

fn axis(half_width: f64, resolution: usize) -> Vec<f64> {
    let step = 2.0 * half_width / (resolution - 1) as f64;
    (0..resolution).map(|i| -half_width + i as f64 * step).collect()
}

/// Writes `<stem>.csv` (x, y, log-density) and `<stem>_score.csv`
/// (x, y, score components) over the square grid.
fn write_panel(model: &dyn ScoreModel, dir: &Path, stem: &str, xs: &[f64]) -> CliResult<(PathBuf, PathBuf)> {
    let density = dir.join(format!("{stem}.csv"));
    let score = dir.join(format!("{stem}_score.csv"));
    let mut dw = output::csv_writer(&density)?;
    let mut sw = output::csv_writer(&score)?;
    dw.write_record(["x", "y", "value"]).map_err(|e| output::csv_error(&density, e))?;
    sw.write_record(["x", "y", "u", "v"]).map_err(|e| output::csv_error(&score, e))?;
    for &y in xs {
        for &x in xs {
            let p = Vector::from_row_slice(&[x, y]);
            let (value, s) = model.log_density_and_score(&p)?;
            dw.serialize((x, y, value)).map_err(|e| output::csv_error(&density, e))?;
            sw.serialize((x, y, s[0], s[1])).map_err(|e| output::csv_error(&score, e))?;
        }
    }
    dw.flush().map_err(|e| CliError::io(&density, e))?;
    sw.flush().map_err(|e| CliError::io(&score, e))?;
    Ok((density, score))
}

fn relative(path: PathBuf, root: &Path) -> PathBuf {
    path.strip_prefix(root).map(Path::to_path_buf).unwrap_or(path)
}

/// Contour and quiver grids for the forward marginals and for three
/// realizations of the backward conditionals, under `figure1/`.
pub fn cmd_figure1(
    config: &ExperimentConfig,
    opts: &RunOptions,
    resolution: Option<usize>,
) -> CliResult<FigureManifest> {
    let resolution = resolution.or(config.resolution).unwrap_or(DEFAULT_RESOLUTION);
    if resolution < 2 {
        return Err(CliError::Config("resolution must be at least 2".into()));
    }
    let model = config.model.build()?;
    let mix = model
        .as_mixture_ref()
        .ok_or_else(|| CliError::Config("figure1 needs a Gaussian mixture".into()))?;
    if mix.dim() != 2 {
        return Err(CliError::Config(format!("figure1 needs a 2-D model, got d = {}", mix.dim())));
    }
    let dir = opts.out.join("figure1");
    output::ensure_dir(&dir)?;
    let half_width = grid_half_width(mix);
    let xs = axis(half_width, resolution);

    let marginals_models: Vec<Model> = THETAS
        .iter()
        .map(|&t| model.anneal(t, (1.0 - t * t).max(0.0).sqrt()))
        .collect::<Result<_, _>>()?;
    let stepsizes: Vec<f64> = THETAS.windows(2).map(|w| w[1] / w[0]).collect();

    let mut marginals = Vec::new();
    for (i, m) in marginals_models.iter().enumerate() {
        let stem = format!("marginal_{}", i + 1);
        let (density, score) = write_panel(m, &dir, &stem, &xs)?;
        marginals.push(Panel {
            label: format!("p_{}", i + 1),
            density: relative(density, &opts.out),
            score: relative(score, &opts.out),
            given: None,
        });
    }

    let last = THETAS.len() - 1;
    let mut conditionals = Vec::new();
    for r in 0..REALIZATIONS {
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
        rng.set_stream(r as u64);
        let mut y = marginals_models[last].exact_sample(1, &mut rng)?.remove(0);
        let mut panels = Vec::new();
        for k in (0..last).rev() {
            let given = y.clone();
            let cond = BackwardConditional::new(&marginals_models[k], stepsizes[k], &given)?;
            let normalized = cond.posterior_mixture()?;
            let stem = format!("conditional_r{}_{}", r + 1, k + 1);
            let (density, score) = write_panel(&normalized, &dir, &stem, &xs)?;
            panels.push(Panel {
                label: format!("p_{}|{}", k + 1, k + 2),
                density: relative(density, &opts.out),
                score: relative(score, &opts.out),
                given: Some(given.iter().copied().collect()),
            });
            y = normalized.exact_sample(1, &mut rng)?.remove(0);
        }
        panels.reverse();
        conditionals.push(panels);
    }

    let manifest = FigureManifest {
        thetas: THETAS.to_vec(),
        stepsizes,
        resolution,
        half_width,
        seed: opts.seed,
        marginals,
        conditionals,
    };
    output::write_json(&dir.join("manifest.json"), &manifest)?;
    Ok(manifest)
}
