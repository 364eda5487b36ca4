use thiserror::Error;

/// Errors raised by the clustering library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("duplicate cluster centre at site {0}")]
    DuplicateCentre(usize),

    #[error("empty centre vector")]
    EmptyCentres,

    #[error("site index {index} out of range for {n_sites} sites")]
    SiteOutOfRange { index: usize, n_sites: usize },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("insufficient exceedances: cluster has {found}, need at least {needed}")]
    InsufficientExceedances { found: usize, needed: usize },

    #[error("maximum likelihood fit did not converge: {0}")]
    NonConvergence(String),

    #[error("matrix is not symmetric positive definite: {0}")]
    NotPositiveDefinite(String),

    #[error("zero variance series")]
    ZeroVariance,

    #[error("return period too short: lambda_u * tau = {0} must exceed 1")]
    ReturnPeriodTooShort(f64),

    #[error("empty trace")]
    EmptyTrace,

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
