use thiserror::Error;

/// Everything that can go wrong inside the library.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("{what} out of domain: {value}")]
    Domain { what: &'static str, value: f64 },

    #[error("empty input")]
    EmptyInput,

    #[error("non-finite statistic at index {index}")]
    NonFinite { index: usize },

    #[error("invalid configuration: {0}")]
    Invalid(String),

    #[error("bin {bin} (center {center}) lies outside the family support")]
    OutsideSupport { bin: usize, center: f64 },

    #[error("rank-deficient design: {0}")]
    RankDeficient(String),

    #[error("IRLS did not converge after {iterations} iterations (score norm {score_norm:e})")]
    NonConvergence {
        iterations: usize,
        score_norm: f64,
        /// Deviance after each iteration.
        trace: Vec<f64>,
    },

    #[error("fitted parameters leave the family domain: {0}")]
    DecodeDomain(String),

    #[error("singular matrix in {0}")]
    Singular(&'static str),

    #[error("zero fitted count in masked bin {bin}")]
    ZeroFitted { bin: usize },

    #[error("{failed} of {total} replicate fits failed")]
    TooManyFailures { failed: usize, total: usize },

    #[error("row {row} has {found} columns, expected {expected}")]
    Ragged {
        row: usize,
        expected: usize,
        found: usize,
    },
}

impl Error {
    /// True for failures of the numerical machinery rather than of the input data.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NonConvergence { .. }
                | Error::DecodeDomain(_)
                | Error::Singular(_)
                | Error::RankDeficient(_)
                | Error::ZeroFitted { .. }
                | Error::TooManyFailures { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_positive(what: &'static str, value: f64) -> Result<()> {
    if value.is_finite() && value > 0.0 {
        Ok(())
    } else {
        Err(Error::Domain { what, value })
    }
}

pub(crate) fn check_finite(what: &'static str, value: f64) -> Result<()> {
    if value.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain { what, value })
    }
}
