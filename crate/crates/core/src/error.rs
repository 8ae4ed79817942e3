use thiserror::Error;

/// Errors produced by density construction, density evolution and the
/// stability/decoder analyses.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("value {value} is not a point of the grid with spacing {spacing}")]
    OffGrid { value: f64, spacing: f64 },

    #[error("incompatible grids: spacing {a_spacing}/support {a_support} vs spacing {b_spacing}/support {b_support}")]
    GridMismatch {
        a_spacing: f64,
        a_support: f64,
        b_spacing: f64,
        b_support: f64,
    },

    #[error("operation requires a density flagged symmetric")]
    NotSymmetric,

    #[error("invalid density: {0}")]
    InvalidDensity(String),

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("decomposition failed: {0}")]
    Decomposition(String),

    #[error("numerical failure: {0}")]
    Numerical(String),
}

impl Error {
    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
