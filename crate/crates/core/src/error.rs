use thiserror::Error;

/// Errors raised by the physics and numerics layers.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),
    #[error("invalid profile: {0}")]
    InvalidProfile(String),
    #[error("wrong profile kind: {0}")]
    WrongProfileKind(String),
    #[error("evaluation point outside region I: {0}")]
    Region(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("quadrature failure: {0}")]
    QuadratureFailure(String),
    #[error("fit failure: {0}")]
    FitFailure(String),
    #[error("outside validity range: {0}")]
    OutOfValidity(String),
    #[error("accuracy undefined: {0}")]
    UndefinedAccuracy(String),
}

pub type Result<T> = std::result::Result<T, Error>;
