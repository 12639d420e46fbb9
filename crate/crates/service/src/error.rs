use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Core(#[from] warntriage_core::Error),

    #[error("config: {0}")]
    Config(String),

    #[error("{} is missing; run `warntriage {step}` first", path.display())]
    Missing { path: PathBuf, step: &'static str },

    #[error("nothing staged for {0}")]
    NothingStaged(String),

    #[error("{0}")]
    BadRequest(String),

    #[error("not found")]
    NotFound,

    #[error("{0}")]
    Internal(String),
}

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn io(path: &std::path::Path, e: std::io::Error) -> Self {
        Error::Core(warntriage_core::Error::io(path, e))
    }
}
