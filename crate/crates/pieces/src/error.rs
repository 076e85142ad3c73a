use thiserror::Error;

/// Failure modes shared by every stage of the pipeline.
#[derive(Debug, Clone, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("empty domain: {0}")]
    EmptyDomain(String),

    #[error("density too large: minimal length {minimal_length} is not positive")]
    DensityTooLarge { minimal_length: f64 },

    #[error("numerical failure in {what} (residual {residual:.3e})")]
    Numerical { what: String, residual: f64 },

    #[error("chain {chain}: requested {requested} particles but capacity is {cap}")]
    Capacity {
        chain: usize,
        requested: usize,
        cap: usize,
    },

    #[error("infeasible: {0}")]
    Infeasible(String),

    #[error("instance too large for enumeration: {0}")]
    TooLarge(String),

    #[error("no root: {0}")]
    NoRoot(String),

    #[error("chain {chain}: {source}")]
    InChain { chain: usize, source: Box<Error> },
}

impl Error {
    pub fn numerical(what: impl Into<String>, residual: f64) -> Self {
        Error::Numerical {
            what: what.into(),
            residual,
        }
    }

    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    /// The innermost error, unwrapping chain context.
    pub fn root(&self) -> &Error {
        match self {
            Error::InChain { source, .. } => source.root(),
            e => e,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
