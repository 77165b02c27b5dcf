use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid subset: {0}")]
    InvalidSubset(String),

    #[error("invalid game: {0}")]
    InvalidGame(String),

    #[error("invalid strategy: {0}")]
    InvalidStrategy(String),

    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("lp solver numerical failure: {0}")]
    Numerical(String),

    #[error("lp is {0}")]
    LpStatus(&'static str),

    #[error("iteration limit of {limit} reached in {solver}")]
    IterationLimit { solver: &'static str, limit: u64 },

    #[error("pipeline invariant violated in stage `{stage}`: {detail}")]
    PipelineInvariant { stage: &'static str, detail: String },

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
