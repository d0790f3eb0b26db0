use thiserror::Error;

/// Errors raised by the laboratory.
///
/// Every variant is either a configuration problem (bad parameters, bad
/// files, violated preconditions) or a numeric/infeasibility problem (a
/// moment that does not exist, a budget that is exceeded). The CLI maps the
/// two classes to distinct exit codes.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("infinite moment: E|X|^{order} diverges for {family}")]
    InfiniteMoment { family: String, order: f64 },

    #[error("tilting unsupported for {0}: use the naive estimator")]
    TiltUnsupported(String),

    #[error("target drift {drift} lies outside the open support hull ({lo}, {hi})")]
    DriftOutsideHull { drift: f64, lo: f64, hi: f64 },

    #[error(
        "outcome budget exceeded: {outcomes} outcomes > {budget}; use lattice_dp or Monte Carlo"
    )]
    OutcomeBudget { outcomes: f64, budget: f64 },

    #[error("instance too large for the lattice DP: n = {n} > {max}")]
    LatticeTooLarge { n: u64, max: u64 },

    #[error("normal tail argument {0} outside [-40, 40]")]
    OutOfRange(f64),

    #[error("cannot merge estimates: {0}")]
    MergeMismatch(String),

    #[error("insufficient rows for a convergence report: {0}")]
    InsufficientRows(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for errors caused by the caller's input rather than by the
    /// numerics of a valid instance.
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            Error::InvalidParameter(_) | Error::Config(_) | Error::Json(_) | Error::Io(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
