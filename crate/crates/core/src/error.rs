use thiserror::Error;

/// Errors raised across the simulation library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid pulse specification: {0}")]
    InvalidSpec(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("cannot scale an all-zero signal to non-zero power")]
    ZeroSignal,

    #[error("lag {lag} out of range for a signal of {len} samples")]
    LagOutOfRange { lag: isize, len: usize },

    #[error("degenerate waveform: {0}")]
    DegenerateWaveform(String),

    #[error("singular Fisher information matrix (determinant {0:e})")]
    SingularFim(f64),

    #[error("finite-difference Hessian did not converge: {0}")]
    NonConvergence(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("initiator and target positions coincide")]
    CoincidentPosition,

    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),

    #[error("detection probability is zero; quantization interval diverges")]
    ZeroProbability,

    #[error("degenerate pulse: {0}")]
    DegeneratePulse(String),

    #[error("no noise power outside the pulse window")]
    ZeroNoise,

    #[error("time went backwards: {previous} s -> {current} s")]
    TimeRegression { previous: f64, current: f64 },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("malformed I/Q file: {0}")]
    IqFormat(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
