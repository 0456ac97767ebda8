use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("format error at byte {offset}: {message}")]
    Format { offset: u64, message: String },

    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("config error in {}: {message}", path.display())]
    Config { path: PathBuf, message: String },

    /// A non-finite value surfaced while evaluating the field.
    #[error("non-finite value produced by layer {layer}")]
    NonFinite { layer: usize },

    /// Training hit a non-finite loss and halted.
    #[error("non-finite loss at step {step} (theta={theta_deg:.3} deg, phi={phi_deg:.3} deg); parameter norms: {param_norms:?}")]
    Diverged {
        step: usize,
        theta_deg: f64,
        phi_deg: f64,
        param_norms: Vec<f64>,
    },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(offset: u64, message: impl Into<String>) -> Self {
        Error::Format {
            offset,
            message: message.into(),
        }
    }
}
