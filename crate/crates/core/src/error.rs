use thiserror::Error;

/// Errors produced by the pilot design and receiver routines.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid band layout: {0}")]
    InvalidLayout(String),

    #[error("zadoff-chu root {root} shares a factor with prime length {prime}")]
    InvalidRoot { root: u64, prime: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("pilot group {group} has no pilots")]
    EmptyPattern { group: usize },

    #[error("invalid pattern: {0}")]
    InvalidPattern(String),

    /// The Fisher information is singular (or too badly conditioned) at the
    /// requested separation. The resolution search treats this as an
    /// infinite bound.
    #[error("unresolvable at this separation (condition number {condition:.3e})")]
    Unresolvable { condition: f64 },

    #[error("no resolution limit in [{lo:.4e}, {hi:.4e}] s")]
    NoSrlInRange { lo: f64, hi: f64 },

    #[error("sampler exhausted after {draws} infeasible draws")]
    SamplerExhausted { draws: usize },

    #[error("numerical failure: {0}")]
    Numerical(String),
}

pub type Result<T> = std::result::Result<T, Error>;
