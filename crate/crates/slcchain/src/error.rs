use std::path::PathBuf;

/// Failures of a CLI command, each mapped to a process exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{} check(s) failed: {}", .0.len(), preview(.0))]
    ChecksFailed(Vec<String>),

    #[error(transparent)]
    Core(#[from] slcchain_core::Error),
}

fn preview(names: &[String]) -> String {
    const SHOWN: usize = 5;
    let mut s = names.iter().take(SHOWN).cloned().collect::<Vec<_>>().join(", ");
    if names.len() > SHOWN {
        s.push_str(&format!(", ... ({} more)", names.len() - SHOWN));
    }
    s
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::ChecksFailed(_) => 1,
            CliError::Config(_) => 2,
            CliError::Core(slcchain_core::Error::Divergence { .. }) => 3,
            CliError::Core(
                slcchain_core::Error::InvalidModel(_)
                | slcchain_core::Error::InvalidParameter { .. }
                | slcchain_core::Error::DimensionMismatch { .. }
                | slcchain_core::Error::PlanMismatch(_),
            ) => 2,
            CliError::Io { .. } | CliError::Core(_) => 4,
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;
