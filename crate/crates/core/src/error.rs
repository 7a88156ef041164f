use thiserror::Error;

use crate::reconstruction::ReconstructionResult;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{0} is not prime")]
    InvalidDimension(usize),

    #[error("residue {value} is not valid modulo {modulus}")]
    InvalidResidue { value: i64, modulus: u64 },

    #[error("Gram matrix cannot be realized by vectors: {0}")]
    RealizationFailure(String),

    #[error("projection for outcome k={k}, setting s={s} has vanishing norm (N = {norm:e})")]
    DegenerateProjection { k: usize, s: usize, norm: f64 },

    #[error("degenerate linear system: {0}")]
    DegenerateSystem(String),

    #[error("record inconsistent with a real Gram matrix: {0}")]
    InconsistentRecord(String),

    #[error("linear inversion is rank deficient: rank {rank} of {required}")]
    RankDeficient { rank: usize, required: usize },

    #[error("square-root domain violated: {0}")]
    DomainViolation(String),

    /// The solver ran but did not reach tolerance. The best-effort result is attached.
    #[error("solver did not converge (residual {residual:e})")]
    SolverFailure {
        residual: f64,
        best: Option<Box<ReconstructionResult>>,
    },

    #[error("method {method} cannot be used for p = {p}")]
    MethodMismatch { method: &'static str, p: u64 },

    #[error("invalid file: {0}")]
    InvalidFile(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True for problems with the inputs themselves (files, flags, method choice) rather than
    /// with solving a well-formed problem.
    pub fn is_input_error(&self) -> bool {
        matches!(
            self,
            Error::InvalidDimension(_)
                | Error::InvalidResidue { .. }
                | Error::MethodMismatch { .. }
                | Error::InvalidFile(_)
                | Error::Json(_)
                | Error::Io(_)
        )
    }
}
