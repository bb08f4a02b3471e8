use std::io;

use thiserror::Error;

/// Errors raised across the crate. Each variant maps onto one of the CLI exit
/// classes via [`Error::exit_code`].
#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("format error: {0}")]
    Format(String),
    #[error("shape error: expected {expected}, got {got} ({what})")]
    Shape {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("topology error: {0}")]
    Topology(String),
    #[error("capacity error: {free} free nodes exceeds the enumeration limit of {limit}")]
    Capacity { free: usize, limit: usize },
    #[error("calibration error: {0}")]
    Calibration(String),
    #[error("black-box sampling requested without a calibrated inverse temperature")]
    CalibrationMissing,
    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    /// Short machine-parsable tag.
    pub fn code(&self) -> &'static str {
        match self {
            Error::Config(_) => "CONFIG",
            Error::Data(_) => "DATA",
            Error::Format(_) => "FORMAT",
            Error::Shape { .. } => "SHAPE",
            Error::Topology(_) => "TOPOLOGY",
            Error::Capacity { .. } => "CAPACITY",
            Error::Calibration(_) => "CALIBRATION",
            Error::CalibrationMissing => "CALIBRATION_MISSING",
            Error::Io(_) => "IO",
        }
    }

    /// Process exit status: 2 config, 3 data/format, 4 numeric/calibration.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Topology(_) | Error::Shape { .. } => 2,
            Error::Data(_) | Error::Format(_) | Error::Io(_) => 3,
            Error::Capacity { .. } | Error::Calibration(_) | Error::CalibrationMissing => 4,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn shape(what: &'static str, expected: usize, got: usize) -> Error {
    Error::Shape {
        what,
        expected,
        got,
    }
}
