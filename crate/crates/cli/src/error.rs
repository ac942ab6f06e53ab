use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("no valid candidate: {0}")]
    NoCandidate(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Io(_) => 2,
            CliError::Numeric(_) => 3,
            CliError::NoCandidate(_) => 4,
        }
    }
}

impl From<graphsel::Error> for CliError {
    fn from(e: graphsel::Error) -> Self {
        match e {
            graphsel::Error::NoValidCandidate(_) => CliError::NoCandidate(e.to_string()),
            _ if e.is_config() => CliError::Config(e.to_string()),
            _ => CliError::Numeric(e.to_string()),
        }
    }
}

impl From<graphsel_oracle::OracleError> for CliError {
    fn from(e: graphsel_oracle::OracleError) -> Self {
        use graphsel_oracle::OracleError as E;
        match e {
            E::TooLarge(_) | E::Invalid(_) => CliError::Config(e.to_string()),
            E::Io(_) | E::Csv(_) => CliError::Io(e.to_string()),
            _ => CliError::Numeric(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Io(e.to_string())
    }
}
