use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid transmon parameters: {0}")]
    InvalidTransmon(String),
    #[error("diagonalization failed: {0}")]
    Diagonalization(String),
    #[error("circuit fit failed: {0}")]
    CircuitFit(String),
    #[error("invalid pulse: {0}")]
    InvalidPulse(String),
    #[error("propagator not unitary (deviation {0:.3e})")]
    NonUnitary(f64),
    #[error("invalid bath parameters: {0}")]
    InvalidBath(String),
    #[error("quadrature did not converge: {0}")]
    Quadrature(String),
    #[error("time {t} ns outside [0, {t_max}] ns")]
    OutOfRange { t: f64, t_max: f64 },
    #[error("invalid schedule: {0}")]
    Schedule(String),
    #[error("trace drift {drift:.3e} at t = {t} ns")]
    TraceDrift { t: f64, drift: f64 },
    #[error("invalid state: {0}")]
    InvalidState(String),
    #[error("trajectory {index} (seed {seed:#x}) failed: {source}")]
    Trajectory {
        index: usize,
        seed: u64,
        #[source]
        source: Box<Error>,
    },
    #[error("grid mismatch: {0}")]
    GridMismatch(String),
    #[error("missing experimental curves: {0}")]
    MissingData(String),
    #[error("fit failed: {0}")]
    Fit(String),
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("invalid config: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
