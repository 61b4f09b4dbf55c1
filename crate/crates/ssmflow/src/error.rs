//! Crate-wide error type.

use thiserror::Error;

/// Errors produced anywhere in the library.
///
/// The CLI maps these onto exit codes: configuration errors exit 1,
/// numerical failures exit 2, I/O errors exit 3.
#[derive(Debug, Error)]
pub enum Error {
    /// Shape or dimensionality mismatch between operands.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// A state or parameter value outside the model's admissible set
    /// (negative populations, non-positive-definite diffusion, ...).
    #[error("invalid state: {0}")]
    InvalidState(String),

    /// Bad configuration: unknown keys, out-of-range settings,
    /// objective/model mismatches.
    #[error("configuration error: {0}")]
    Config(String),

    /// Numerical failure: non-finite values, degenerate statistics,
    /// exhausted retries.
    #[error("numerical failure: {0}")]
    Numeric(String),

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    /// Failure while parsing one of the text file formats.
    #[error("parse error in {file}: {detail}")]
    Parse { file: String, detail: String },

    /// A pipeline stage failed; wraps the underlying error with context.
    #[error("stage '{stage}' failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    /// Attach a pipeline stage name to an error.
    pub fn in_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }

    /// Exit code for the CLI: 1 configuration, 2 numerical, 3 I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Parse { .. } => 1,
            Error::Shape(_) | Error::InvalidState(_) | Error::Numeric(_) => 2,
            Error::Io(_) => 3,
            Error::Stage { source, .. } => source.exit_code(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
