use thiserror::Error;

/// Errors raised by the simulation library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("time {0} is not a node of the grid")]
    NotOnGrid(f64),

    #[error("incompatible inputs: {0}")]
    Incompatible(String),

    #[error("state diverged at t = {time} (|x| = {norm:e})")]
    Diverged { time: f64, norm: f64 },

    #[error("diffusion matrix is singular at x = {0:?}")]
    SingularDiffusion(Vec<f64>),

    #[error("{aborted} of {total} paths aborted, above the {threshold} abort-rate threshold")]
    AbortThreshold {
        aborted: usize,
        total: usize,
        threshold: f64,
    },

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidParameter(msg.into())
}
