use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A scan, slice or manifest could not be read or is malformed.
    #[error("dataset error: {0}")]
    Dataset(String),

    #[error("shape error: {0}")]
    Shape(String),

    /// A binary volume or checkpoint file violates its format contract.
    #[error("format error: {0}")]
    Format(String),

    #[error("config error: {0}")]
    Config(String),

    /// Caller-supplied numeric input violates a precondition.
    #[error("input error: {0}")]
    Input(String),

    #[error("state error: {0}")]
    State(String),

    /// Training produced a non-finite loss or gradient.
    #[error(
        "numerical abort at step {step}: l_con={l_con}, l_mix={l_mix}, l_clf={l_clf}, total={total}"
    )]
    Numerical {
        step: usize,
        l_con: f64,
        l_mix: f64,
        l_clf: f64,
        total: f64,
    },

    #[error("i/o error on {path}: {source}")]
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
