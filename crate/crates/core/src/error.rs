use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("invalid failure set: {0}")]
    InvalidSet(String),

    #[error("set has no positive distance-from-origin certificate")]
    SetTouchesOrigin,

    #[error("transform matrix is not invertible (smallest singular value {0:e})")]
    NonInvertibleTransform(f64),

    #[error("coefficient norms are not summable: {0}")]
    NotAbsolutelySummable(String),

    #[error("aggregate coefficient matrix is singular (smallest singular value {min_sv:e}, norm {norm:e})")]
    SingularAggregate { min_sv: f64, norm: f64 },

    #[error("truncation lag {lag} exceeds the maximum {max}; raise truncation_rel_err")]
    TruncationTooLong { lag: u64, max: u64 },

    #[error("noise window of {requested} values exceeds the memory cap of {cap}")]
    AllocationBudgetExceeded { requested: usize, cap: usize },

    #[error("invalid window request: {0}")]
    InvalidWindow(String),

    #[error("overlap denominator is zero within Monte Carlo error")]
    ZeroDenominator,

    #[error("conditioning event too rare: {accepted} acceptances in {attempts} attempts (estimated rate {estimate:e})")]
    AcceptanceTooRare {
        attempts: u64,
        accepted: u64,
        estimate: f64,
    },

    #[error("no spectral atom direction reaches the failure set")]
    NoAtomReachesGamma,

    #[error("scan range [{have_min}, {have_max}] does not cover [-{cap}, {cap}]")]
    ScanRangeTooShort {
        have_min: i64,
        have_max: i64,
        cap: i64,
    },

    #[error("noise window [{have_min}, {have_max}] does not cover [{need_min}, {need_max}]")]
    WindowTooShort {
        have_min: i64,
        have_max: i64,
        need_min: i64,
        need_max: i64,
    },

    #[error("empty sample")]
    EmptySample,

    #[error("no result rows to report")]
    EmptyResult,

    #[error("config error in `{field}`: {message}")]
    Config { field: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: message.into(),
        }
    }
}
