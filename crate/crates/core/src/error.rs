use thiserror::Error;

/// Errors raised across the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("sparsity error: k = {k} must satisfy 1 <= k <= m = {m}")]
    Sparsity { k: usize, m: usize },

    #[error("degenerate signal: Ax = 0 with finite SNR {snr_db} dB")]
    DegenerateSignal { snr_db: f64 },

    #[error("step-size error: objective increased at iteration {iter} ({prev} -> {next})")]
    StepSize { iter: usize, prev: f64, next: f64 },

    #[error("factorization failed: {0}")]
    Factorization(String),

    #[error("numeric error in layer {layer}: non-finite value")]
    NonFinite { layer: usize },

    #[error("contract error: {0}")]
    Contract(String),

    #[error("budget exceeded: {what} = {value} > {budget}")]
    Budget {
        what: &'static str,
        value: usize,
        budget: usize,
    },

    #[error("spectral error: no convergence after {iters} iterations (best estimate {estimate})")]
    Spectral { iters: usize, estimate: f64 },

    #[error("invalid margin: mu = {mu} must lie in (0, lambda0 = {lambda0})")]
    InvalidMargin { mu: f64, lambda0: f64 },

    #[error("divergence at epoch {epoch}: loss {loss} exceeds {limit}")]
    Divergence {
        epoch: usize,
        loss: f64,
        limit: f64,
        records: Vec<crate::training::TrainRecord>,
    },

    #[error("invalid configuration: {field}: {message}")]
    Config { field: String, message: String },

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: message.into(),
        }
    }
}
