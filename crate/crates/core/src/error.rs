use thiserror::Error;

/// Errors produced anywhere in the laboratory.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid dimension for {what}: expected {expected}, got {got}")]
    InvalidDimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("degenerate calibration: beta = {beta}")]
    DegenerateCalibration { beta: f64 },

    #[error("matrix `{what}` is not symmetric positive definite")]
    NotPositiveDefinite { what: &'static str },

    #[error("matrix `{what}` is singular")]
    Singular { what: &'static str },

    #[error("integration blew up at step {step} (t = {time})")]
    BlowUp { step: u64, time: f64 },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("all samples fall outside the histogram range")]
    EmptyHistogram,

    #[error("series has zero variance")]
    DegenerateSeries,

    #[error("covariance is ill-conditioned (condition number {condition:e})")]
    IllConditioned { condition: f64 },

    #[error("requested lag {requested} exceeds curve extent {available}")]
    Range { requested: f64, available: f64 },

    #[error("{excluded} of {total} ensemble members blew up")]
    TooManyExclusions { excluded: usize, total: usize },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("unknown key `{key}` in section [{section}] at line {line}")]
    UnknownKey {
        section: String,
        key: String,
        line: usize,
    },

    #[error("invalid configuration: {0}")]
    Validation(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_len(what: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::InvalidDimension {
            what,
            expected,
            got,
        })
    }
}
