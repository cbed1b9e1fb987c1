use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Error)]
pub enum GpError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("Cholesky factorization failed (attempted jitter up to {attempted_jitter:.3e})")]
    Factorization { attempted_jitter: f64 },

    #[error("objective became non-finite in the {block} block")]
    NonFiniteObjective { block: &'static str },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("csv error at row {row}, column {column}: {message}")]
    Csv {
        row: usize,
        column: String,
        message: String,
    },

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("serialization error: {0}")]
    Serialization(String),
}

impl GpError {
    /// True for failures of the numerics (factorization, diverging objectives),
    /// as opposed to bad inputs. The CLI maps these to a distinct exit code.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            GpError::Factorization { .. } | GpError::NonFiniteObjective { .. }
        )
    }

    pub(crate) fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        GpError::Io {
            path: path.display().to_string(),
            source,
        }
    }
}
