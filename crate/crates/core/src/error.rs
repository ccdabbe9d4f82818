use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid instance at `{path}`: {reason}")]
    InvalidInstance { path: String, reason: String },

    /// A stage allocation would leave some arm with zero pulls.
    #[error("insufficient budget: arm {arm} gets zero pulls from a stage budget of {stage_budget}")]
    InsufficientBudget { arm: usize, stage_budget: u64 },

    #[error("invalid state: {0}")]
    InvalidState(String),

    /// An estimated or supplied standard deviation is zero, so the z-value is undefined.
    #[error("degenerate variance for arm {arm}, metric {metric}")]
    DegenerateVariance { arm: usize, metric: usize },

    #[error("{num_treatments} treatments exceed the enumeration cap of {max}; use h3_prime")]
    TooLarge { num_treatments: usize, max: usize },

    #[error("unknown preset `{0}`")]
    UnknownPreset(String),

    #[error("schema error at `{path}`: {message}")]
    Schema { path: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    /// A failure inside one (algorithm, budget) cell of an experiment.
    #[error("cell algo={algorithm} budget={budget}: {source}")]
    Cell { algorithm: String, budget: u64, source: Box<Error> },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    /// The innermost error, looking through cell context.
    pub fn root(&self) -> &Error {
        match self {
            Error::Cell { source, .. } => source.root(),
            other => other,
        }
    }
}
