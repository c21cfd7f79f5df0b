//! Command-line front end.

use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::commands::{figure, plan, sample, verify, RunOptions};
use crate::config::ExperimentConfig;
use crate::error::CliResult;
use crate::output;

#[derive(Debug, Parser)]
#[command(name = "slcchain", version, about = "Plan, run and verify chains of SLC sampling problems")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Experiment config (JSON).
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory; overrides the config's `out`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Master seed; overrides the config's `seed`.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads (0 = one per core).
    #[arg(long, default_value_t = 0)]
    pub threads: usize,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Print and save the trajectory plan.
    Plan(Common),
    /// Draw samples through the backward chain.
    Sample {
        #[command(flatten)]
        common: Common,
        /// Also dump the sampler trace of the first trajectory as CSV.
        #[arg(long)]
        trace: bool,
    },
    /// Run the numerical checks and write a report.
    Verify(Common),
    /// Write density and score grids for the five-stage illustration.
    Figure1 {
        #[command(flatten)]
        common: Common,
        /// Grid points per axis.
        #[arg(long)]
        resolution: Option<usize>,
    },
}

impl Common {
    fn load(&self) -> CliResult<(ExperimentConfig, RunOptions)> {
        let config = ExperimentConfig::load(&self.config)?;
        let out = self
            .out
            .clone()
            .or_else(|| config.out.clone())
            .unwrap_or_else(|| PathBuf::from("out"));
        let opts = RunOptions {
            out,
            seed: self.seed.unwrap_or(config.seed),
            threads: self.threads,
        };
        Ok((config, opts))
    }
}

fn print(text: &str) {
    let mut stdout = std::io::stdout().lock();
    let _ = writeln!(stdout, "{text}");
}

pub fn run(cli: &Cli) -> CliResult<()> {
    match &cli.command {
        Command::Plan(common) => {
            let (config, opts) = common.load()?;
            let plan = plan::cmd_plan(&config, &opts)?;
            print(&output::to_json(&plan)?);
        }
        Command::Sample { common, trace } => {
            let (config, opts) = common.load()?;
            let summary = sample::cmd_sample(&config, &opts, *trace)?;
            print(&output::to_json(&summary)?);
        }
        Command::Verify(common) => {
            let (config, opts) = common.load()?;
            let report = verify::cmd_verify(&config, &opts)?;
            print(&format!("{} check(s) as expected", report.checks.len()));
        }
        Command::Figure1 { common, resolution } => {
            let (config, opts) = common.load()?;
            let manifest = figure::cmd_figure1(&config, &opts, *resolution)?;
            print(&format!(
                "wrote {} marginal and {} conditional grids",
                manifest.marginals.len(),
                manifest.conditionals.iter().map(Vec::len).sum::<usize>()
            ));
        }
    }
    Ok(())
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn main_exit_code() -> i32 {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
