pub mod figure;
pub mod plan;
pub mod sample;
pub mod verify;

/// Settings shared by every subcommand, after command-line overrides.
#[derive(Debug, Clone)]
pub struct RunOptions {
    pub out: std::path::PathBuf,
    pub seed: u64,
    /// Worker threads; 0 picks the number of cores.
    pub threads: usize,
}

impl RunOptions {
    pub fn pool(&self) -> crate::error::CliResult<rayon::ThreadPool> {
        rayon::ThreadPoolBuilder::new()
            .num_threads(self.threads)
            .build()
            .map_err(|e| crate::error::CliError::Config(format!("cannot start thread pool: {e}")))
    }
}
