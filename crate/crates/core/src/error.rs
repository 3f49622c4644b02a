use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("degenerate law: {0}")]
    Degenerate(String),

    #[error("matrix is not positive definite even after jitter: {0}")]
    NotPositiveDefinite(String),

    #[error("undefined correlation: {0}")]
    UndefinedCorrelation(String),

    #[error("insufficient samples: {0}")]
    InsufficientSamples(String),

    #[error("spectral radius iteration did not converge (best bound {bound})")]
    NoConvergence { bound: f64 },

    #[error("iteration {iteration}: {source}")]
    AtIteration {
        iteration: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// True for failures of the linear algebra or of the sampling laws, as
    /// opposed to bad input or configuration.
    pub fn is_numerical(&self) -> bool {
        match self {
            Error::Degenerate(_) | Error::NotPositiveDefinite(_) | Error::NoConvergence { .. } => {
                true
            }
            Error::AtIteration { source, .. } => source.is_numerical(),
            _ => false,
        }
    }

    pub(crate) fn at_iteration(self, iteration: usize) -> Self {
        Error::AtIteration {
            iteration,
            source: Box::new(self),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
