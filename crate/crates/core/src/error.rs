use thiserror::Error;

/// Errors raised by the market primitives and solvers.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum MarketError {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("range error: {0}")]
    Range(String),

    #[error("numerical failure in {context}: {detail}")]
    Numerical { context: String, detail: String },

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("internal consistency violated: {0}")]
    Consistency(String),

    #[error("solver failed at t={t} for trader {trader}: {source}")]
    Trade {
        t: u64,
        trader: usize,
        #[source]
        source: Box<MarketError>,
    },
}

impl MarketError {
    pub(crate) fn numerical(context: impl Into<String>, detail: impl Into<String>) -> Self {
        MarketError::Numerical {
            context: context.into(),
            detail: detail.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, MarketError>;
