use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("map evaluated at singular point x = {x}")]
    SingularPoint { x: f64 },

    #[error("orbit blew up at t = {t}: |state| = {norm:e}")]
    Blowup { t: f64, norm: f64 },

    #[error("step size underflow at t = {t} (h = {h:e})")]
    StiffnessFailure { t: f64, h: f64 },

    #[error("transported basis lost rank (condition number {cond:e})")]
    DegenerateBasis { cond: f64 },

    #[error("orbit enters a singular neighborhood at grid index {index} (|X| = {speed:e})")]
    NearSingularity { index: usize, speed: f64 },

    #[error("no section crossing within time budget {budget}")]
    NoReturn { budget: f64 },

    #[error("section is tangent to the flow at t = {t} (margin {margin:e})")]
    Tangency { t: f64, margin: f64 },

    #[error("no spectral gap at grid index {index}: singular value ratio {ratio}")]
    SpectralGapFailure { index: usize, ratio: f64 },

    #[error("state is not an equilibrium: |X| = {residual:e}")]
    NotAnEquilibrium { residual: f64 },

    #[error("shooting did not close the orbit: residual {residual:e}")]
    NotPeriodic { residual: f64 },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("config error in `{field}`: {message}")]
    Config { field: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: message.into(),
        }
    }
}
