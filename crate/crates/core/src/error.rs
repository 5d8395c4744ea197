use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("format error: {0}")]
    Format(String),

    #[error("geometry error: {0}")]
    Geometry(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("parameter error: {0}")]
    Parameter(String),

    #[error("preprocessing error: {0}")]
    Preprocessing(String),

    #[error("optimization error: {0}")]
    Optimization(String),

    #[error("internal error: {0}")]
    Internal(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
