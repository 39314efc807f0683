use thiserror::Error;

pub type Result<T> = std::result::Result<T, CliError>;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),

    #[error("{0}")]
    Runtime(String),

    #[error(transparent)]
    Core(#[from] bislab_core::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    /// 1 for configuration problems, 2 for failures while running.
    pub fn exit_code(&self) -> u8 {
        use bislab_core::Error as E;
        match self {
            CliError::Config(_) => 1,
            CliError::Core(E::Config(_) | E::InvalidSpec(_) | E::InvalidInput(_)) => 1,
            _ => 2,
        }
    }
}

pub(crate) fn config_err(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}
