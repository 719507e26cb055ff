use std::path::PathBuf;

use thiserror::Error;

/// Every failure the engine can report.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: (usize, usize),
        rhs: (usize, usize),
    },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("temperature must be positive, got {0}")]
    NonPositiveTemperature(f64),
    #[error("matrix is not positive definite (tried jitter up to {max_jitter:e})")]
    NotPositiveDefinite { max_jitter: f64 },
    #[error("matrix is not symmetric (max asymmetry {0:e})")]
    NotSymmetric(f64),
    #[error("backward() requires a 1x1 loss, got {0}x{1}")]
    NonScalarLoss(usize, usize),
    #[error("optimizer received an empty parameter list")]
    EmptyParameterList,
    #[error("optimizer parameter layout changed: {0}")]
    ParameterLayout(String),

    #[error("bad magic bytes in embedding file {0}")]
    BadMagic(PathBuf),
    #[error("truncated embedding file {path}: expected {expected} bytes, found {found}")]
    TruncatedFile {
        path: PathBuf,
        expected: u64,
        found: u64,
    },
    #[error("dimension mismatch: {0}")]
    DimMismatch(String),
    #[error("source labels missing: {0}")]
    MissingSourceLabels(String),
    #[error("class count mismatch: {0}")]
    ClassCountMismatch(String),
    #[error("dangling reference: {0}")]
    DanglingReference(String),
    #[error("target ratio must lie in (0, 1], got {0}")]
    RatioOutOfRange(f64),
    #[error("malformed input: {0}")]
    Malformed(String),

    #[error("zero-norm vector where a direction is required")]
    ZeroVector,
    #[error("learnable anchors need dim >= classes ({dim} < {classes})")]
    DimTooSmall { dim: usize, classes: usize },
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("no labels available for the {0} split")]
    NoLabelsForSplit(&'static str),
    #[error("pseudo-label table is missing target sample {0}")]
    MissingPseudoLabels(usize),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("JSON error in {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn json(path: impl Into<PathBuf>, source: serde_json::Error) -> Self {
        Error::Json {
            path: path.into(),
            source,
        }
    }

    /// True for failures caused by bad inputs or flags rather than by the computation.
    pub fn is_usage(&self) -> bool {
        matches!(
            self,
            Error::BadMagic(_)
                | Error::TruncatedFile { .. }
                | Error::DimMismatch(_)
                | Error::MissingSourceLabels(_)
                | Error::ClassCountMismatch(_)
                | Error::DanglingReference(_)
                | Error::RatioOutOfRange(_)
                | Error::Malformed(_)
                | Error::InvalidConfig(_)
                | Error::MissingPseudoLabels(_)
                | Error::NoLabelsForSplit(_)
                | Error::Json { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
