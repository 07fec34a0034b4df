use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o failure: {0}")]
    IoFailure(#[from] io::Error),

    #[error("malformed header: {0}")]
    MalformedHeader(String),

    #[error("truncated payload: expected {expected} bytes, found {found}")]
    TruncatedPayload { expected: usize, found: usize },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("non-finite value at row {row}, column {col}")]
    NonFiniteValue { row: usize, col: usize },

    #[error("row {0} is the zero vector")]
    ZeroVector(usize),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("empty positive set")]
    EmptyPositiveSet,

    #[error("criterion inversion for anchor {anchor}: psi {psi} >= phi {phi}")]
    CriterionInversion { anchor: usize, phi: f64, psi: f64 },

    #[error("anchor {anchor}: {source}")]
    Anchor {
        anchor: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("anchor {0} is not part of the mining result")]
    AnchorNotMined(usize),

    #[error("labels are required but absent")]
    MissingLabels,

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("training diverged at epoch {epoch}")]
    Diverged { epoch: usize },

    #[error("csv parse error at line {line}: {msg}")]
    Csv { line: usize, msg: String },
}

impl Error {
    pub(crate) fn at_anchor(self, anchor: usize) -> Self {
        Error::Anchor {
            anchor,
            source: Box::new(self),
        }
    }

    /// Strips [`Error::Anchor`] wrappers.
    pub fn root(&self) -> &Error {
        match self {
            Error::Anchor { source, .. } => source.root(),
            other => other,
        }
    }
}
