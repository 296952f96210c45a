use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid mechanism shape: {0}")]
    InvalidShape(String),

    #[error("invalid accounting configuration: {0}")]
    InvalidConfig(String),

    #[error("non-finite input: {0}")]
    NonFinite(String),

    #[error("enumeration of C({t}, {k}) subsets exceeds the cap of {cap}")]
    EnumerationTooLarge { t: usize, k: usize, cap: u64 },

    #[error("no passing noise multiplier found at or below {ceiling}")]
    BracketFailed { ceiling: f64 },
}

impl Error {
    /// True for errors caused by bad user input rather than a numerical
    /// contract violation.
    pub fn is_usage(&self) -> bool {
        matches!(self, Error::InvalidShape(_) | Error::InvalidConfig(_))
    }
}
