use num_complex::Complex64;
use thiserror::Error;

/// Errors produced by the numerical routines.
#[derive(Debug, Clone, Error)]
pub enum Error {
    #[error("invalid dimensions: {0}")]
    Dimension(String),

    #[error("coefficient check failed at t = {t}: {what}")]
    Coefficient { t: f64, what: String },

    #[error("invalid boundary frame: {0}")]
    InvalidFrame(String),

    #[error("boundary parameter is not a self-adjoint pair: {0}")]
    NotSelfAdjoint(String),

    #[error("integrator step size underflow at t = {t} (lambda = {lambda})")]
    StepUnderflow { lambda: Complex64, t: f64 },

    #[error("integrator exceeded {max_steps} steps at t = {t} (lambda = {lambda})")]
    TooManySteps {
        lambda: Complex64,
        t: f64,
        max_steps: usize,
    },

    #[error("lambda = {lambda} is at or near the spectrum (condition number {cond:.3e})")]
    NearSpectrum { lambda: Complex64, cond: f64 },

    #[error("boundary limit did not converge (last change {change:.3e}, tolerance {tol:.1e})")]
    LimitUndetermined { change: f64, tol: f64 },

    #[error("cannot classify L2 solutions at lambda = {lambda}: {reason}")]
    LimitClassification { lambda: Complex64, reason: String },

    #[error("evaluation point rejected: {0}")]
    Domain(String),

    #[error("grids do not match: {0}")]
    GridMismatch(String),

    #[error("spectral resolution failure: {0}")]
    Resolution(String),

    #[error("frame inconsistency: {0}")]
    FrameInconsistency(String),
}

pub type Result<T> = std::result::Result<T, Error>;
