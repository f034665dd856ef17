use thiserror::Error;

/// Errors raised by the simulation and verification API.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid grid: {0}")]
    Grid(String),

    #[error("field on a {found} grid does not match the expected {expected} grid")]
    GridMismatch { expected: String, found: String },

    #[error("field contains a non-finite value at index {index}")]
    NonFinite { index: usize },

    #[error("invalid parameter `{name}`: {reason}")]
    Parameter { name: &'static str, reason: String },

    #[error("data not well prepared: {0}")]
    WellPrepared(String),

    #[error("time step {dt} exceeds the stable limit {limit}")]
    Unstable { dt: f64, limit: f64 },

    #[error("contact sets overlap at {count} grid points (contact tolerance too large for the obstacle separation)")]
    ContactOverlap { count: usize },

    #[error("test field is not admissible: {0}")]
    Inadmissible(String),

    #[error("precondition violated: {0}")]
    Precondition(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Error {
    Error::Parameter { name, reason: reason.into() }
}
