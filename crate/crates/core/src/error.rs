use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid value for `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("resource budget exceeded: {0}")]
    Resource(String),

    #[error("solver did not converge: {what} (residual {residual:.3e} after {iterations} iterations)")]
    NonConvergence {
        what: String,
        residual: f64,
        iterations: usize,
    },

    #[error("step size underflow at t = {t}: {context}")]
    Stiffness { t: f64, context: String },

    #[error("time step too large: total jump probability {probability:.4} per step")]
    StepTooLarge { probability: f64 },

    #[error("{0}")]
    Analysis(String),

    #[error("cache error: {0}")]
    Cache(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }
}
