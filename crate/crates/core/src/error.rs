use thiserror::Error;

/// Errors produced while building or interrogating model spaces and the
/// objects derived from them.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("unknown point id {0}")]
    UnknownPoint(usize),

    #[error("operation `{op}` is not supported on chart `{chart}`")]
    UnsupportedChart { op: &'static str, chart: String },

    #[error("laplacian construction failed: {0}")]
    Construction(String),

    #[error("eigensolver failed: {0}")]
    Eigensolver(String),

    #[error("time {t} outside the field's span [0, {horizon}]")]
    TimeOutOfSpan { t: f64, horizon: f64 },

    #[error("transport problem too large: {support} support points (limit {limit})")]
    SupportTooLarge { support: usize, limit: usize },

    #[error("degenerate marginal: {0}")]
    DegenerateMarginal(String),

    #[error("linear program infeasible: {0}")]
    Infeasible(String),

    #[error("step size {step} violates the stability bound {bound}")]
    StepTooLarge { step: f64, bound: f64 },

    #[error("gate `{gate}` failed: {detail}")]
    GateFailure { gate: &'static str, detail: String },

    #[error("fit failed: {0}")]
    FitFailed(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("format error at line {line}: {reason}")]
    Format { line: usize, reason: String },

    #[error("checksum mismatch (stored {stored}, computed {computed})")]
    Checksum { stored: String, computed: String },

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name,
        reason: reason.into(),
    }
}
