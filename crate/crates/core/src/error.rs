use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("arm {arm} has no observed events")]
    EmptyArm { arm: usize },

    #[error("subject {index} has negative follow-up time {time}")]
    NegativeTime { index: usize, time: f64 },

    #[error("bin width must be positive, got {0}")]
    InvalidWidth(f64),

    #[error("dimension mismatch: expected {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("survival curves are defined on different grids")]
    GridMismatch,

    #[error("solver failed at theta = {theta}, gamma = {gamma}: {reason}")]
    SolverFailure { theta: f64, gamma: i8, reason: String },

    #[error("internal error: solver start point is infeasible")]
    InfeasibleStart,

    #[error("survival is numerically zero at t = {0}")]
    ZeroSurvival(f64),

    #[error("crossing time {theta} is outside (0, {t_max})")]
    CrossingOutOfRange { theta: f64, t_max: f64 },

    #[error("arm {arm} has {points} grid points; smoothing needs at least 3")]
    DegenerateWindow { arm: usize, points: usize },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("every bootstrap or permutation replicate failed ({0} attempted)")]
    AllReplicatesFailed(usize),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("config error: {0}")]
    Config(String),
}

impl Error {
    /// True for errors caused by the optimizer rather than the data.
    pub fn is_solver_failure(&self) -> bool {
        matches!(self, Error::SolverFailure { .. } | Error::InfeasibleStart)
    }
}
