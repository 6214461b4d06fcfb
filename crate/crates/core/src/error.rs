use thiserror::Error;

/// Errors raised across the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("non-finite gradient in parameter `{param}`")]
    NonFiniteGradient { param: String },

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),

    #[error("time index {t} out of range 0..={max}")]
    OutOfRange { t: usize, max: usize },

    #[error("monotonicity violated for {weight} at t={t}")]
    Monotonicity { weight: &'static str, t: usize },

    #[error("denominator below guard ({what}) at t={t}")]
    DivisionGuard { what: &'static str, t: usize },

    #[error("reverse step {step}: {source}")]
    Step {
        step: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("training diverged: {0}")]
    Diverged(String),

    #[error("IPF aborted in {phase}: {skipped} of {total} samples hit the denominator guard")]
    IpfAbort {
        phase: String,
        skipped: usize,
        total: usize,
    },

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
