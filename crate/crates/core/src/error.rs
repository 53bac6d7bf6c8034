use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("syntax error at byte {offset}: {message}")]
    Syntax { offset: usize, message: String },

    #[error("unknown identifier `{name}` at byte {offset}")]
    UnknownIdentifier { name: String, offset: usize },

    #[error("function `{name}` takes {expected} argument(s), got {found} (byte {offset})")]
    Arity {
        name: String,
        expected: usize,
        found: usize,
        offset: usize,
    },

    #[error("unbound name `{0}`")]
    UnboundName(String),

    #[error("coordinate x{index} used on a {dim}-dimensional chart")]
    CoordinateOutOfRange { index: usize, dim: usize },

    #[error("division by zero")]
    DivisionByZero,

    #[error("non-finite value produced by {0}")]
    NonFinite(String),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("valence mismatch: {0}")]
    ValenceMismatch(String),

    #[error(
        "grid has {points} points on axis {axis}, stencil of order {order} needs at least {needed}"
    )]
    GridTooSmall {
        axis: usize,
        points: usize,
        order: usize,
        needed: usize,
    },

    #[error("unsupported difference order {0} (expected 2, 4, 6 or 8)")]
    FdOrder(usize),

    #[error("degenerate metric at grid point {point}: {reason}")]
    DegenerateMetric { point: usize, reason: String },

    #[error("tensor field fails the {tag} invariant: residual {residual:e}")]
    SymmetryViolation { tag: &'static str, residual: f64 },

    #[error("dimension {found} not supported here: {reason}")]
    Dimension { found: usize, reason: &'static str },

    #[error("invalid argument: {0}")]
    Invalid(String),

    #[error("unknown preset `{0}`")]
    UnknownPreset(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("serialization: {0}")]
    Serialize(String),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }
}
