use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MathError {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
}

#[derive(Debug, Error)]
pub enum InstanceError {
    #[error("instance has no variables")]
    Empty,
    #[error("iid_uniform instance needs n >= 1")]
    EmptyIid,
    #[error("variable {index}: no atoms")]
    NoAtoms { index: usize },
    #[error("variable {index}: probability mass {mass} ≠ 1")]
    Mass { index: usize, mass: f64 },
    #[error("variable {index}: non-distinct support (value {value} repeated)")]
    NonDistinct { index: usize, value: f64 },
    #[error("variable {index}: support not sorted ascending at value {value}")]
    Unsorted { index: usize, value: f64 },
    #[error("variable {index}: value {value} is negative or not finite")]
    BadValue { index: usize, value: f64 },
    #[error("variable {index}: probability {prob} is outside (0, 1]")]
    BadProb { index: usize, prob: f64 },
    #[error("invalid parameters: {0}")]
    Params(String),
    #[error(transparent)]
    Math(#[from] MathError),
    #[error("parse error: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("ordering error: {0}")]
    Ordering(String),
    #[error("instance too large for exact evaluation: {0}")]
    TooLarge(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("invalid parameters: {0}")]
    Params(String),
    #[error(transparent)]
    Instance(#[from] InstanceError),
    #[error(transparent)]
    Math(#[from] MathError),
}

#[derive(Debug, Error)]
pub enum DpError {
    #[error("invalid DP inputs: {0}")]
    Inputs(String),
    #[error(transparent)]
    Instance(#[from] InstanceError),
    #[error(transparent)]
    Math(#[from] MathError),
}
