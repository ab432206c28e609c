use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] optcons::Error),

    #[error("missing column `{0}`")]
    MissingColumn(String),

    #[error("no samples in {0}")]
    EmptyCsv(String),

    #[error("row {row}: column `{column}` is not a number")]
    BadValue { row: usize, column: String },

    #[error("{0}")]
    Usage(String),

    #[error("integration diverged; last finite sample at t = {time}")]
    Diverged { time: f64 },
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Core(e.into())
    }
}

impl CliError {
    /// 0 ok, 1 parse or usage, 2 assumption violation, 3 divergence.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Core(optcons::Error::Assumption { .. }) => 2,
            CliError::Core(optcons::Error::Divergence { .. }) | CliError::Diverged { .. } => 3,
            _ => 1,
        }
    }
}
