use thiserror::Error;

/// Errors raised by the estimation, optimisation and simulation layers.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid timing profile: {0}")]
    InvalidProfile(String),

    #[error("time efficiency is undefined for a frame with no slots")]
    EmptyStats,

    #[error("lambert_w0 is undefined for x = {0} (< -1/e)")]
    LambertDomain(f64),

    #[error("invalid sub-frame observation: {0}")]
    InvalidObservation(String),

    #[error("n_max = {n_max} is below the feasibility bound {required}")]
    NmaxTooSmall { n_max: u32, required: u32 },

    #[error("invalid frame parameters: {0}")]
    InvalidFrame(String),

    #[error("slot cap of {cap} exceeded (seed {seed}, {unread} tags still unread)")]
    SlotCapExceeded { cap: u64, seed: u64, unread: u32 },

    #[error("strategy '{strategy}' asked to continue past the end of a {frame}-slot frame")]
    ProtocolViolation { strategy: String, frame: u32 },

    #[error("config key '{key}': {message}")]
    Config { key: String, message: String },

    #[error("table file line {line}: {message}")]
    TableFormat { line: usize, message: String },

    #[error("{0}")]
    Io(String),
}

impl Error {
    pub(crate) fn config(key: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            message: message.into(),
        }
    }

    /// True for errors caused by user input (bad config, bad files) rather
    /// than by a run that went wrong.
    pub fn is_input_error(&self) -> bool {
        matches!(
            self,
            Error::Config { .. }
                | Error::TableFormat { .. }
                | Error::InvalidProfile(_)
                | Error::InvalidFrame(_)
                | Error::NmaxTooSmall { .. }
                | Error::InvalidObservation(_)
                | Error::Io(_)
        )
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
