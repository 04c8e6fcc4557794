use thiserror::Error;

use crate::integrate::Trajectory;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("syntax error at byte {offset} in '{text}': {message}")]
    Syntax { offset: usize, message: String, text: String },

    #[error("unknown identifier '{name}' at byte {offset}")]
    UnknownIdentifier { offset: usize, name: String },

    #[error("exponent '{literal}' at byte {offset} is not an integer")]
    NonIntegerExponent { offset: usize, literal: String },

    #[error("complex constant at byte {offset}: coefficients must be real")]
    ComplexConstant { offset: usize },

    #[error("cannot evaluate {node} at x = {x}: {reason}")]
    Domain { node: String, x: f64, reason: String },

    #[error("coefficient {name}: {source}")]
    Coefficient {
        name: String,
        #[source]
        source: Box<Error>,
    },

    #[error("invalid expression: {0}")]
    InvalidExpression(String),

    #[error("matrix is not Hermitian (deviation {deviation:e})")]
    NotHermitian { deviation: f64 },

    #[error("matrix is singular (pivot {pivot})")]
    Singular { pivot: usize },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("leading coefficient vanishes at x = {x}")]
    Degenerate { x: f64 },

    #[error("step size underflow at x = {x}")]
    StepUnderflow { x: f64 },

    #[error("divergent beyond measurable range at x = {x}")]
    Divergent { x: f64, partial: Option<Box<Trajectory>> },

    #[error("indeterminate classification: {0}")]
    Indeterminate(String),

    #[error("boundary form signature mismatch: {0}")]
    Signature(String),

    #[error("inconsistent with theory: {0}")]
    Inconsistent(String),

    #[error("limit not resolved at this x_max (variation {variation:e})")]
    LimitNotResolved { variation: f64 },

    #[error("ill-conditioned projection: {0}")]
    IllConditioned(String),

    #[error("{path}: {message}")]
    Config { path: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
