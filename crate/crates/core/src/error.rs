use thiserror::Error;

#[derive(Debug, Error)]
pub enum QstError {
    #[error("overlap matrix is singular (|det| = {det:e}); the frame is not informationally complete")]
    SingularOverlap { det: f64 },

    #[error("outcome length {got} does not match {expected} qubits")]
    LengthMismatch { expected: usize, got: usize },

    #[error("{what}: {n} qubits exceeds the cap of {cap}")]
    CapExceeded { what: &'static str, n: usize, cap: usize },

    #[error("invalid symbol {0}; outcomes use the alphabet 0..=3")]
    InvalidSymbol(u8),

    #[error("invalid state: {0}")]
    InvalidState(String),

    #[error("probability {0:e} is negative beyond rounding tolerance")]
    NegativeProbability(f64),

    #[error("qubit mismatch: {left} vs {right}")]
    QubitMismatch { left: usize, right: usize },

    #[error("empty batch")]
    EmptyBatch,

    #[error("empty dataset")]
    EmptyDataset,

    #[error("non-finite gradient in parameter block `{0}`")]
    NonFiniteGradient(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("need at least {needed} epochs, have {have}")]
    TooFewEpochs { needed: usize, have: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("missing checkpoint for epoch {0}")]
    MissingCheckpoint(usize),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, QstError>;
