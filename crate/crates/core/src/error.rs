use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid trap configuration: {0}")]
    InvalidTrap(String),

    #[error("axial potential does not confine the ions: {0}")]
    InvalidPotential(String),

    #[error("solver did not converge: {0}")]
    NonConvergence(String),

    #[error("ions {0} and {1} coincide")]
    IonCollision(usize, usize),

    #[error("crystal is unstable along the drive axis (eigenvalue {0:.3e})")]
    UnstableCrystal(f64),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("tone at mu = {mu} is within the guard band of mode {mode}")]
    ResonantTone { mu: f64, mode: usize },

    #[error("weights cannot be realized by the tone grid (relative residual {0:.3e})")]
    InfeasibleWeights(f64),

    #[error("coupling matrix has no off-diagonal part")]
    ZeroOffDiagonal,

    #[error("unknown graph name `{0}`")]
    UnknownName(String),

    #[error("graph `{name}` is incompatible with this crystal: {reason}")]
    IncompatibleN { name: String, reason: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

pub type Result<T> = std::result::Result<T, Error>;
