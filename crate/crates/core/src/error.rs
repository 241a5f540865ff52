use thiserror::Error;

/// Errors raised by the simulation library.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("degenerate drag at t={t}: smallest eigenvalue of the symmetric part is below lambda/2 = {floor}")]
    DegenerateDrag { t: f64, floor: f64 },

    #[error("non-finite value while evaluating {what} at t={t}")]
    Evaluation { what: &'static str, t: f64 },

    #[error("singular matrix in {0}")]
    SingularMatrix(&'static str),

    #[error("Lyapunov equation has no unique solution: {0}")]
    NoUniqueSolution(&'static str),

    #[error("matrix exponential out of range (norm {0:.3e})")]
    Range(f64),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("fast process diverged on path {path_id} at step {step}")]
    FastProcessDivergence { path_id: u64, step: usize },

    #[error("model does not support the {kind} specialization: {reason}")]
    WrongSpecialization { kind: &'static str, reason: String },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("unknown model `{0}`")]
    UnknownModel(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
