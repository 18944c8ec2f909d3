use std::fmt;

use serde::Serialize;

/// Which side of the matrix an error refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    Row,
    Column,
}

impl fmt::Display for Axis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Axis::Row => f.write_str("row"),
            Axis::Column => f.write_str("column"),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid shape: {0}")]
    InvalidShape(String),

    #[error("observed value at t={t}, cell ({row}, {col}) is not finite")]
    NonFiniteValue { t: usize, row: usize, col: usize },

    #[error("cell ({row}, {col}) is never observed")]
    NeverObservedCell { row: usize, col: usize },

    #[error("{axis} pair ({i}, {j}) has overlap {count}, below the minimum {min}")]
    InsufficientOverlap {
        axis: Axis,
        i: usize,
        j: usize,
        count: u64,
        min: u64,
    },

    #[error("matrix is not symmetric (relative asymmetry {asymmetry:e})")]
    NotSymmetric { asymmetry: f64 },

    #[error("requested {requested} eigenpairs from a {dim}x{dim} matrix")]
    RankDeficient { requested: usize, dim: usize },

    #[error("leading eigenvalue {leading:e} is not positive")]
    DegenerateSpectrum { leading: f64 },

    #[error("symmetric eigensolver did not converge on a {dim}x{dim} matrix")]
    EigenNoConvergence { dim: usize },

    #[error("{axis} rank {requested} exceeds dimension {dim}")]
    RankTooLarge {
        axis: Axis,
        requested: usize,
        dim: usize,
    },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("{axis} eigenvalue {index} is {value:e}, too small to invert")]
    SingularEigenvalues { axis: Axis, index: usize, value: f64 },

    #[error("{axis} rotation is singular (reciprocal condition {rcond:e})")]
    SingularRotation { axis: Axis, rcond: f64 },

    #[error("input has rank {rank} but {cols} columns")]
    RankDeficientInput { rank: usize, cols: usize },

    #[error("{got} replications, at least {min} required")]
    TooFewReplications { got: usize, min: usize },

    #[error("coordinate {coordinate} has zero spread")]
    DegenerateDraws { coordinate: usize },

    #[error("autoregressive coefficient {0} is outside (-1, 1)")]
    InvalidPsi(f64),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: u64, message: String },

    #[error("duplicate record for t={t}, row={row}, col={col}")]
    DuplicateCell { t: usize, row: String, col: String },

    #[error("inconsistent vocabulary: {0}")]
    InconsistentVocabulary(String),

    #[error("non-positive value {value} at t={t}, cell ({row}, {col}) cannot be logged")]
    NonPositiveForLog {
        t: usize,
        row: usize,
        col: usize,
        value: f64,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Stable machine-readable name, used in the CLI's error JSON.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidShape(_) => "InvalidShape",
            Error::NonFiniteValue { .. } => "NonFiniteValue",
            Error::NeverObservedCell { .. } => "NeverObservedCell",
            Error::InsufficientOverlap { .. } => "InsufficientOverlap",
            Error::NotSymmetric { .. } => "NotSymmetric",
            Error::RankDeficient { .. } => "RankDeficient",
            Error::DegenerateSpectrum { .. } => "DegenerateSpectrum",
            Error::EigenNoConvergence { .. } => "EigenNoConvergence",
            Error::RankTooLarge { .. } => "RankTooLarge",
            Error::DimensionMismatch(_) => "DimensionMismatch",
            Error::SingularEigenvalues { .. } => "SingularEigenvalues",
            Error::SingularRotation { .. } => "SingularRotation",
            Error::RankDeficientInput { .. } => "RankDeficientInput",
            Error::TooFewReplications { .. } => "TooFewReplications",
            Error::DegenerateDraws { .. } => "DegenerateDraws",
            Error::InvalidPsi(_) => "InvalidPsi",
            Error::InvalidConfig(_) => "InvalidConfig",
            Error::Parse { .. } => "ParseError",
            Error::DuplicateCell { .. } => "DuplicateCell",
            Error::InconsistentVocabulary(_) => "InconsistentVocabulary",
            Error::NonPositiveForLog { .. } => "NonPositiveForLog",
            Error::Io(_) => "Io",
            Error::Json(_) => "Json",
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
