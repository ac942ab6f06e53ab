use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid graph: {0}")]
    InvalidGraph(String),
    #[error("graph is disconnected")]
    Disconnected,
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("singular system: {0}")]
    Singular(String),
    #[error("did not converge: {0}")]
    NotConverged(String),
    #[error("numerical failure: {0}")]
    Numeric(String),
    #[error("no valid candidate among {0} scored models")]
    NoValidCandidate(usize),
}

impl Error {
    /// True for errors caused by bad inputs rather than numerical trouble.
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            Error::InvalidGraph(_)
                | Error::Disconnected
                | Error::Dimension(_)
                | Error::InvalidParameter(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
