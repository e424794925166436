use std::path::PathBuf;

/// Errors produced anywhere in the augmentation pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("bad magic: expected {expected}, found {found}")]
    BadMagic { expected: String, found: String },

    #[error("truncated payload: header declares {expected} bytes, found {found}")]
    TruncatedPayload { expected: usize, found: usize },

    #[error("unsupported image shape {rows}x{cols} (only 28x28 is supported)")]
    UnsupportedShape { rows: u32, cols: u32 },

    #[error("label {label} at position {index} is outside 0..=9")]
    LabelOutOfRange { index: usize, label: u8 },

    #[error("unsupported format version {found} (expected {expected})")]
    UnsupportedVersion { expected: u32, found: u32 },

    #[error("invalid counts: {0}")]
    InvalidCounts(String),

    #[error("class {class} has fewer than {needed} samples in the selected pool after {attempts} attempts")]
    InsufficientClassSamples { class: u8, needed: usize, attempts: usize },

    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("non-finite parameter update ({0})")]
    NonFiniteUpdate(String),

    #[error("non-finite loss ({0})")]
    NonFiniteLoss(String),

    #[error("batch of {0} rows is too small for batch normalization (need at least 2)")]
    BatchTooSmall(usize),

    #[error("effective batch is empty")]
    EmptyEffectiveBatch,

    #[error("inconsistent scenario: {0}")]
    InconsistentScenario(String),

    #[error("missing labels: {0}")]
    MissingLabels(&'static str),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("replication {replication}: {source}")]
    Replication {
        replication: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short, stable name of the variant (used in machine-readable CLI errors).
    pub fn kind(&self) -> &'static str {
        match self {
            Error::BadMagic { .. } => "BadMagic",
            Error::TruncatedPayload { .. } => "TruncatedPayload",
            Error::UnsupportedShape { .. } => "UnsupportedShape",
            Error::LabelOutOfRange { .. } => "LabelOutOfRange",
            Error::UnsupportedVersion { .. } => "UnsupportedVersion",
            Error::InvalidCounts(_) => "InvalidCounts",
            Error::InsufficientClassSamples { .. } => "InsufficientClassSamples",
            Error::DimensionMismatch { .. } => "DimensionMismatch",
            Error::NonFiniteUpdate(_) => "NonFiniteUpdate",
            Error::NonFiniteLoss(_) => "NonFiniteLoss",
            Error::BatchTooSmall(_) => "BatchTooSmall",
            Error::EmptyEffectiveBatch => "EmptyEffectiveBatch",
            Error::InconsistentScenario(_) => "InconsistentScenario",
            Error::MissingLabels(_) => "MissingLabels",
            Error::Config(_) => "Config",
            Error::Replication { source, .. } => source.kind(),
            Error::Io { .. } => "Io",
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn check_dim(context: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            context,
            expected,
            got,
        })
    }
}
