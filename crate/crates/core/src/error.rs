use thiserror::Error;

/// Errors raised anywhere in the pipeline.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("closed forms are only available for I = 3/2 (got 2I = {0})")]
    UnsupportedSpin(i32),

    #[error("resonance: {what} (detuning {detuning_mhz:.3e} MHz)")]
    Singularity { what: String, detuning_mhz: f64 },

    #[error("no convergence after {steps} steps: {detail}")]
    NonConvergence { steps: usize, detail: String },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("resource limit: {0}")]
    Resource(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
