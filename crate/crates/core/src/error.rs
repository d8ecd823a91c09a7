use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("modulus {0} is not prime")]
    NotPrime(u64),
    #[error("modulus {0} is outside the supported range [3, 2^62)")]
    ModulusOutOfRange(u64),
    #[error("zero has no multiplicative inverse")]
    ZeroInverse,
    #[error("operands use different moduli ({0} vs {1})")]
    ModulusMismatch(u64, u64),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("matrix is singular")]
    Singular,
    #[error("rows are linearly dependent or outside the target span")]
    DependentInput,
    #[error("ciphertext width {width} does not match the expected {kind} layout for N = {dim}")]
    WidthMismatch {
        width: usize,
        dim: usize,
        kind: &'static str,
    },
    #[error("system has no relative degree: J = 0 and H F^i G = 0 for all i < n")]
    NoRelativeDegree,
    #[error("T2 x0 is nonzero; the output cannot be held at zero")]
    NonzeroInitialOutput,
    #[error("insufficient residue history: need {needed} samples, have {available}")]
    InsufficientHistory { needed: usize, available: usize },
    #[error("session order violation: {0}")]
    SessionOrderViolation(&'static str),
    #[error("observability matrix of (A+BK, C) is rank deficient (smallest singular value {0:e})")]
    ObservabilityFailure(f64),
    #[error("realization is not integral: max deviation {0:e}")]
    NotIntegral(f64),
    #[error("modulus too small: |{quantity}| = {magnitude:e} needs q > {required:e}, have q = {q}")]
    ModulusTooSmall {
        quantity: String,
        magnitude: f64,
        required: f64,
        q: u64,
    },
    #[error("non-finite or diverging state at step {0}")]
    NonFinite(usize),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("format error: {0}")]
    Format(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("i/o error: {0}")]
    Io(String),
}
