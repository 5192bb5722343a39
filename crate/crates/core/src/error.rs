use std::path::PathBuf;

/// Errors produced by the estimation library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("domain error in {func}: argument {arg} outside ({lower}, inf)")]
    Domain {
        func: &'static str,
        arg: f64,
        lower: f64,
    },

    #[error("root finder: no sign change on [{lower}, {upper}] after bracket expansion")]
    NoSignChange { lower: f64, upper: f64 },

    #[error("root finder: non-finite function value at x = {x}")]
    NonFiniteValue { x: f64 },

    #[error("{equation}: {source}")]
    Solver {
        equation: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("matrix is not positive definite: {context}")]
    NotPositiveDefinite { context: &'static str },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("zero denominator in {0}")]
    ZeroDenominator(&'static str),

    #[error("failed to read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv parse error in {path}: {message}")]
    Parse { path: PathBuf, message: String },
}

impl Error {
    pub(crate) fn solver(equation: &'static str, source: Error) -> Self {
        Error::Solver {
            equation,
            source: Box::new(source),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
