use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid truncation: {0} levels (need at least 2)")]
    InvalidTruncation(usize),

    #[error("mode {mode} out of range for {modes} modes")]
    ModeOutOfRange { mode: usize, modes: usize },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("level schemes do not match")]
    SchemeMismatch,

    #[error("invalid mode selection: {0}")]
    InvalidSelection(String),

    #[error("invalid state: {0}")]
    InvalidState(String),

    #[error("singular parameters: {0}")]
    Singularity(String),

    #[error("target coupling {requested:.6e} rad/s is not reachable; feasible maximum is {feasible_max:.6e} rad/s")]
    Infeasible { requested: f64, feasible_max: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("integrator step size underflow at t = {t:.6e} s")]
    StepUnderflow { t: f64 },

    #[error("integrator exceeded {steps} steps at t = {t:.6e} s")]
    TooManySteps { steps: usize, t: f64 },

    #[error("Kraus operators are not complete: max deviation {0:.3e}")]
    Incomplete(f64),

    #[error("measurement settings are not informationally complete (rank {rank} of {needed})")]
    NotInformationallyComplete { rank: usize, needed: usize },

    #[error("ideal distribution is degenerate after flooring")]
    DegenerateDistribution,

    #[error("sampling interval {dt:.3e} s violates Nyquist for f_high = {f_high:.3e} Hz")]
    Nyquist { dt: f64, f_high: f64 },

    #[error("no dominant frequency found in trace")]
    NoDominantFrequency,

    #[error("flux map is not monotone over the requested range")]
    NonMonotoneMap,

    #[error("fit failed: {0}")]
    FitFailed(String),
}
