use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("degenerate input: {0}")]
    DegenerateInput(String),
    #[error("insufficient samples: n = {n}, d = {d}")]
    InsufficientSamples { n: usize, d: usize },
    #[error("every eigenvalue was truncated; the matrix has rank zero")]
    ZeroRank,
    #[error("combination needs at least {needed} p-values, got {got}")]
    InsufficientTests { needed: usize, got: usize },
    #[error("invalid tree: {0}")]
    InvalidTree(String),
    #[error("invalid node {0}: {1}")]
    InvalidNode(usize, String),
    #[error("no internal node could be tested")]
    EmptyReport,
}

impl Error {
    /// True for failures caused by the data being statistically unusable
    /// rather than malformed.
    pub fn is_degeneracy(&self) -> bool {
        matches!(
            self,
            Error::DegenerateInput(_)
                | Error::InsufficientSamples { .. }
                | Error::ZeroRank
                | Error::InsufficientTests { .. }
                | Error::EmptyReport
        )
    }
}

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidInput(msg.into())
}

pub(crate) fn degenerate(msg: impl Into<String>) -> Error {
    Error::DegenerateInput(msg.into())
}
