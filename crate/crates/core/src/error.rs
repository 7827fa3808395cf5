//! Error types shared across the crate.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Parse failure with source location and the token set that would have
/// been accepted at that point.
#[derive(Debug, Clone, PartialEq, Error)]
#[error("parse error at line {line}, column {column}: {message} (expected {expected:?})")]
pub struct ParseError {
    pub offset: usize,
    pub line: usize,
    pub column: usize,
    pub message: String,
    pub expected: Vec<String>,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    /// Evaluation outside a function's domain. `at` names the offending
    /// variable values so a failed sample can be located.
    #[error("domain error: {op} of {value} at {at}")]
    Domain {
        op: &'static str,
        value: f64,
        at: String,
    },

    #[error(transparent)]
    Parse(#[from] ParseError),

    #[error("unbound variable `{0}`")]
    UnboundVariable(String),

    #[error("unknown function `{0}`")]
    UnknownFunction(String),

    #[error("function `{name}` expects {expected} argument(s), got {got}")]
    WrongArity {
        name: String,
        expected: usize,
        got: usize,
    },

    #[error("singular velocity Hessian (det = {det:e}) at {at}")]
    SingularHessian { det: f64, at: String },

    #[error("singular constraint matrix C at {at}")]
    SingularConstraintMatrix { at: String },

    #[error("singular bordered system at {at}")]
    SingularBorderedSystem { at: String },

    #[error("singular linear system: {0}")]
    SingularSystem(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("fiber map rank deficient: rank {rank}, expected {expected} at {at}")]
    RankDeficient {
        rank: usize,
        expected: usize,
        at: String,
    },

    #[error("problem file, section [{section}]: {message}")]
    ProblemFile { section: String, message: String },

    #[error("unknown example `{name}`; available: {available}")]
    UnknownExample { name: String, available: String },

    #[error("sampling failed: {0}")]
    Sampling(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Format a point as `name=value` pairs for error context.
    pub fn point_context(names: &[String], point: &[f64]) -> String {
        names
            .iter()
            .zip(point.iter())
            .map(|(n, v)| format!("{n}={v}"))
            .collect::<Vec<_>>()
            .join(", ")
    }
}
