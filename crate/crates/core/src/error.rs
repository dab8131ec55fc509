use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid configuration or parameters (maps to exit code 2).
    #[error("config error: {0}")]
    Config(String),

    /// A point outside the chart of a model space.
    #[error("domain error: {0}")]
    Domain(String),

    /// A non-finite value appeared while stepping the flow.
    #[error("numerical failure at step {step}, grid point {point}: {message}")]
    Numerical {
        step: usize,
        point: usize,
        message: String,
    },

    /// The requested check does not apply to the given data.
    #[error("inapplicable: {0}")]
    Inapplicable(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}
