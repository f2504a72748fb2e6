//! Crate-wide error type. Every failure carries a stable machine-readable
//! code (`Error::code`) that the CLI prints as a single-line tag on stderr.

use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("malformed config {path}: {reason}")]
    MalformedConfig { path: PathBuf, reason: String },

    #[error("invalid value for `{key}`: {reason}")]
    InvalidValue { key: String, reason: String },

    #[error("io failure on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("checkpoint version mismatch: {reason}")]
    VersionMismatch { reason: String },

    #[error("corrupt checkpoint {path}: {reason}")]
    CorruptCheckpoint { path: PathBuf, reason: String },

    #[error("chip has no capture distance")]
    MissingDistance,

    #[error("capture distance must be positive, got {value}")]
    NonpositiveDistance { value: f64 },

    #[error("class {class} has zero records")]
    EmptyClass { class: usize },

    #[error("invalid synthetic spec: {reason}")]
    InvalidSpec { reason: String },

    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: String, got: String },

    #[error("non-finite input in {what}")]
    NonFiniteInput { what: String },

    #[error("non-finite gradient in {what}")]
    NonFiniteGradient { what: String },

    #[error("label {label} out of range for {num_classes} classes")]
    LabelOutOfRange { label: usize, num_classes: usize },

    #[error("no data: {what}")]
    DataEmpty { what: String },

    #[error("frozen source classifier parameters changed (epoch {epoch})")]
    FrozenViolation { epoch: usize },

    #[error("target labels reachable from a gradient path: {what}")]
    LabelLeak { what: String },

    #[error("label fraction {value} outside (0, 1]")]
    FractionOutOfRange { value: f64 },

    #[error("unknown feature extractor `{name}`")]
    UnknownExtractor { name: String },

    #[error("feature dimension mismatch: {a} vs {b}")]
    DimensionMismatch { a: usize, b: usize },

    #[error("training diverged: {what}")]
    Diverged { what: String },
}

impl Error {
    /// Stable machine-parsable tag, one per failure class.
    pub fn code(&self) -> &'static str {
        match self {
            Error::MalformedConfig { .. } => "MALFORMED_CONFIG",
            Error::InvalidValue { .. } => "INVALID_VALUE",
            Error::Io { .. } => "IO_FAILURE",
            Error::VersionMismatch { .. } => "VERSION_MISMATCH",
            Error::CorruptCheckpoint { .. } => "CORRUPT_CHECKPOINT",
            Error::MissingDistance => "MISSING_DISTANCE",
            Error::NonpositiveDistance { .. } => "NONPOSITIVE_DISTANCE",
            Error::EmptyClass { .. } => "EMPTY_CLASS",
            Error::InvalidSpec { .. } => "INVALID_SPEC",
            Error::ShapeMismatch { .. } => "SHAPE_MISMATCH",
            Error::NonFiniteInput { .. } => "NON_FINITE_INPUT",
            Error::NonFiniteGradient { .. } => "NON_FINITE_GRADIENT",
            Error::LabelOutOfRange { .. } => "LABEL_OUT_OF_RANGE",
            Error::DataEmpty { .. } => "DATA_EMPTY",
            Error::FrozenViolation { .. } => "FROZEN_VIOLATION",
            Error::LabelLeak { .. } => "LABEL_LEAK",
            Error::FractionOutOfRange { .. } => "FRACTION_OUT_OF_RANGE",
            Error::UnknownExtractor { .. } => "UNKNOWN_EXTRACTOR",
            Error::DimensionMismatch { .. } => "DIMENSION_MISMATCH",
            Error::Diverged { .. } => "TRAINING_DIVERGED",
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
