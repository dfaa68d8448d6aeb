use thiserror::Error;

/// Errors raised while building scenarios, processes and reports.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{name} {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("time {t} outside [0, {horizon}]")]
    TimeOutOfRange { t: f64, horizon: f64 },

    #[error("processes live on different event grids")]
    GridMismatch,

    #[error("unsupported integrand: {0}")]
    UnsupportedIntegrand(String),

    #[error("cumulative hazard decreases on segment starting at t = {0}")]
    DecreasingHazard(f64),

    #[error("survival process vanishes at t = {0} inside the window")]
    ZeroSurvival(f64),

    #[error("formula {formula} is not applicable to model {model} with payoff {payoff}")]
    NotApplicable {
        formula: String,
        model: String,
        payoff: String,
    },

    #[error("inadmissible payoff: {0}")]
    InadmissiblePayoff(String),

    #[error("functional requested data at t = {requested} beyond its cut-off s = {cutoff}")]
    FunctionalLookahead { requested: f64, cutoff: f64 },

    #[error("invalid config: {0}")]
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
