use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("more blocks than coordinates (d={d}, n={n})")]
    MoreBlocksThanCoords { d: usize, n: usize },

    #[error("shape mismatch: expected {expected}, got {actual}")]
    Shape { expected: String, actual: String },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("enumeration too large: n={0} (max 12)")]
    EnumerationTooLarge(usize),

    #[error("bound singular at p=1")]
    SingularAtPOne,

    #[error("gamma too large for C1: 6L^2 gamma^2/(1-sqrt(beta))^2 = {0} >= 1")]
    GammaTooLarge(f64),

    #[error("beta must lie in [0, 1), got {0}")]
    BetaOutOfRange(f64),

    #[error("config error: {0}")]
    Config(String),
}

impl Error {
    /// True for errors caused by a numerical precondition rather than bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NonFinite(_)
                | Error::SingularAtPOne
                | Error::GammaTooLarge(_)
                | Error::BetaOutOfRange(_)
                | Error::EnumerationTooLarge(_)
        )
    }
}
