use thiserror::Error;

/// Errors raised by the network models, the controller, the integrators and the learners.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("domain error: {what} = {value}")]
    Domain { what: &'static str, value: f64 },

    #[error("no compensation possible: microalgae uptake {m23} must be positive")]
    NoCompensation { m23: f64 },

    #[error("model domain error: {reason} at state {state:?}")]
    ModelDomain { reason: String, state: Vec<f64> },

    #[error("near-singular input matrix: |G[{index}][{index}]| = {value:e} below threshold {threshold:e}")]
    NearSingularG {
        index: usize,
        value: f64,
        threshold: f64,
    },

    #[error("configuration error: {0}")]
    Configuration(String),

    #[error("settling-time bound T_max = {t_max} must exceed 1")]
    HorizonTooShort { t_max: f64 },

    #[error("initial condition is the origin; controller output is identically zero")]
    DegenerateOrigin,

    #[error("integration failure at t = {t}: {reason}")]
    IntegrationFailure { t: f64, reason: String },

    #[error("step-size underflow at t = {t} (h = {h:e}); problem too stiff for the oracle")]
    Stiffness { t: f64, h: f64 },

    #[error("calibration failure: no step above {floor:e} matched the oracle within {tolerance:e} (best error {best_error:e})")]
    CalibrationFailure {
        floor: f64,
        tolerance: f64,
        best_error: f64,
    },

    #[error("episode finished after {steps} steps; call reset")]
    EpisodeFinished { steps: usize },

    #[error("training aborted: {0}")]
    TrainingAbort(String),

    #[error("i/o error: {0}")]
    Io(String),

    #[error("parse error: {0}")]
    Parse(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn ensure_finite(what: &'static str, value: f64) -> Result<f64> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::InvalidArgument(format!("{what} is not finite ({value})")))
    }
}
