use thiserror::Error;

/// Failures grouped by exit code.
#[derive(Debug, Error)]
pub enum CliError {
    /// Bad flags, config or noise spec. Exit code 2.
    #[error("{0}")]
    Usage(String),
    /// Missing or malformed inputs and artifacts. Exit code 3.
    #[error("{0}")]
    Data(String),
    /// NaN or infinite losses during training. Exit code 4.
    #[error("{0}")]
    Numeric(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Data(_) => 3,
            CliError::Numeric(_) => 4,
        }
    }
}

impl From<g2g::Error> for CliError {
    fn from(e: g2g::Error) -> Self {
        use g2g::Error as E;
        match e {
            E::Usage(_) | E::Config(_) => CliError::Usage(e.to_string()),
            E::NonFinite { .. } => CliError::Numeric(e.to_string()),
            E::Shape { .. } | E::Input(_) | E::Checkpoint(_) | E::Png(_) | E::Io(_) => CliError::Data(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Data(e.to_string())
    }
}
