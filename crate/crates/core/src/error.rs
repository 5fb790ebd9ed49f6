use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("index {index} out of range for {len} modes")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("mode index {0} selected twice")]
    DuplicateIndex(usize),

    #[error("keep count {keep} outside 1..={modes}")]
    KeepOutOfRange { keep: usize, modes: usize },

    #[error("matrix is not antisymmetric (max |X + X^T| = {0:e})")]
    NotAntisymmetric(f64),

    #[error("Jacobi sweep did not converge after {sweeps} sweeps (off-diagonal norm {residual:e})")]
    NoConvergence { sweeps: usize, residual: f64 },

    #[error("{count} single-particle level(s) at zero energy; occupation is ambiguous")]
    DegenerateGroundState { count: usize },

    #[error("{modes} modes is too many for the dense oracle (limit {limit})")]
    OracleTooLarge { modes: usize, limit: usize },

    #[error("lattice of {sites} sites per axis cannot be coarse-grained: {reason}")]
    LatticeTooSmall { sites: usize, reason: &'static str },

    #[error("geometry error: {0}")]
    Geometry(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
