use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid spin system: {0}")]
    InvalidSpinSystem(String),
    #[error("negative duration {0} s")]
    NegativeDuration(f64),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid relaxation matrix: {0}")]
    InvalidRelaxation(String),
    #[error("invalid chirp/filter parameters: {0}")]
    InvalidFilter(String),
    #[error("chirp duration {chirp} s exceeds mixing time {mixing} s")]
    ChirpLongerThanMixing { chirp: f64, mixing: f64 },
    #[error("invalid pulse program: {0}")]
    InvalidProgram(String),
    #[error("invalid acquisition parameters: {0}")]
    InvalidAcquisition(String),
    #[error("processing error: {0}")]
    Processing(String),
    #[error("oracle step {step} s too large; need <= {limit} s")]
    StepTooLarge { step: f64, limit: f64 },
    #[error("oracle did not converge: step-halving changed result by {0:e}")]
    NotConverged(f64),
    #[error("i/o error: {0}")]
    Io(String),
    #[error(transparent)]
    Parse(#[from] crate::dsl::ParseError),
}
