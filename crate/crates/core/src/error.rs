use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("parse error at row {row}: {message}")]
    Parse { row: usize, message: String },

    #[error("validation error in cluster (stratum {stratum}, cluster {cluster}): {message}")]
    Validation {
        stratum: i64,
        cluster: i64,
        message: String,
    },

    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("information matrix is rank deficient; null direction {direction:?}")]
    RankDeficient { direction: Vec<f64> },

    #[error("matrix is ill-conditioned (condition estimate {condition:.3e})")]
    IllConditioned { condition: f64 },

    #[error("singular matrix: {0}")]
    Singular(String),

    #[error("refusing to test: the fit did not converge")]
    NotConverged,

    #[error("power approximation undefined at the null; use the noncentral chi-square approximation instead")]
    PowerAtNull,
}

impl Error {
    /// True for failures of the numerics (as opposed to bad input).
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::RankDeficient { .. }
                | Error::IllConditioned { .. }
                | Error::Singular(_)
                | Error::NotConverged
                | Error::PowerAtNull
        )
    }
}
