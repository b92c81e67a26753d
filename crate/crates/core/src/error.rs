use thiserror::Error;

/// Errors raised by the numerical core.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("time {t} outside motion horizon [0, {t_max}]")]
    TimeOutOfRange { t: f64, t_max: f64 },
    #[error("invalid motion parameter: {0}")]
    InvalidMotion(&'static str),
    #[error("degenerate Jacobian at t={t}")]
    DegenerateJacobian { t: f64 },
    #[error("grid resolution {n} below minimum of 8 cells")]
    GridTooCoarse { n: usize },
    #[error("grid mismatch: expected n={expected}, found n={found}")]
    GridMismatch { expected: usize, found: usize },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("{solver} did not converge: residual {residual:e} after {iterations} iterations")]
    SolverDiverged {
        solver: &'static str,
        iterations: usize,
        residual: f64,
    },
    #[error("time step must be positive and finite, got {0}")]
    BadTimeStep(f64),
    #[error("state not solenoidal: max |div| = {max_div:e}")]
    NotSolenoidal { max_div: f64 },
    #[error("solution blew up at t={t}")]
    BlowUp { t: f64 },
    #[error("invalid noise model: {0}")]
    InvalidNoise(&'static str),
    #[error("re-reference time {t_new} must not precede current reference {t0}")]
    RereferenceBackwards { t_new: f64, t0: f64 },
    #[error("re-reference trigger fired before the first scan step at t0={t0}")]
    TriggerTooEarly { t0: f64 },
    #[error("invalid configuration: {0}")]
    InvalidConfig(&'static str),
    #[error("argument {0} outside the domain [0, inf)")]
    NegativeArgument(f64),
    #[error("audit needs more samples: {0}")]
    NotEnoughSamples(&'static str),
    #[error("audit under-resolved: {0}")]
    UnderResolved(&'static str),
}

pub type Result<T> = core::result::Result<T, Error>;
