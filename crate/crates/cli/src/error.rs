use thiserror::Error;
use wingfit::ckf::CkfError;
use wingfit::multibody::ModelError;
use wingfit::simulate::SimError;
use wingfit::table::TableError;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),
    #[error("{0}")]
    Input(String),
    #[error("numerical divergence: {0}")]
    Divergence(String),
    #[error("invariant violated: {0}")]
    Invariant(String),
}

impl CliError {
    /// 2 for usage and input problems, 3 for numerical failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Input(_) => 2,
            CliError::Divergence(_) | CliError::Invariant(_) => 3,
        }
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        CliError::Input(e.to_string())
    }
}

impl From<TableError> for CliError {
    fn from(e: TableError) -> Self {
        CliError::Input(e.to_string())
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        match e {
            SimError::Config(m) => CliError::Input(format!("invalid simulation config: {m}")),
            other => CliError::Divergence(format!("simulation: {other}")),
        }
    }
}

impl From<CkfError> for CliError {
    fn from(e: CkfError) -> Self {
        match e {
            CkfError::Dimension { .. } | CkfError::Net(_) => CliError::Input(e.to_string()),
            other => CliError::Divergence(format!("training: {other}")),
        }
    }
}

pub fn io_error(path: &std::path::Path, e: std::io::Error) -> CliError {
    CliError::Input(format!("{}: {e}", path.display()))
}
