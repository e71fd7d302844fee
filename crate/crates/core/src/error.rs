use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// A data row could not be parsed. `row` counts data rows from 1, header excluded.
    #[error("{source_name}: row {row}: {message}")]
    Parse {
        source_name: String,
        row: usize,
        message: String,
    },

    #[error("{source_name}: row {row}: gap in hourly series ({previous} -> {current})")]
    Gap {
        source_name: String,
        row: usize,
        previous: String,
        current: String,
    },

    #[error("{source_name}: row {row}: timestamps not strictly increasing ({previous} -> {current})")]
    NonMonotonic {
        source_name: String,
        row: usize,
        previous: String,
        current: String,
    },

    #[error("{series}: coverage shortfall: {detail}")]
    Coverage { series: String, detail: String },

    #[error("invalid data: {0}")]
    Data(String),

    #[error("config: {0}")]
    Config(String),

    #[error("invalid argument: {0}")]
    InvalidInput(String),

    #[error(transparent)]
    Aggregator(#[from] crate::aggregator::AggregatorError),

    #[error("invariant violated: {0}")]
    Invariant(String),
}

/// Process exit status classes used by the command-line front end.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitClass {
    Config = 1,
    Data = 2,
    Internal = 3,
}

impl Error {
    pub fn exit_class(&self) -> ExitClass {
        match self {
            Error::Config(_) | Error::InvalidInput(_) => ExitClass::Config,
            Error::Io { .. }
            | Error::Parse { .. }
            | Error::Gap { .. }
            | Error::NonMonotonic { .. }
            | Error::Coverage { .. }
            | Error::Data(_) => ExitClass::Data,
            Error::Aggregator(_) | Error::Invariant(_) => ExitClass::Internal,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
