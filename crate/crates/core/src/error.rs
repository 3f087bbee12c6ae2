// SPDX-License-Identifier: MIT OR Apache-2.0

use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("series too short: need n >= {needed}, got n = {got}")]
    SeriesTooShort { needed: usize, got: usize },

    /// A simulated path left the representable range. `step` counts from the
    /// first burn-in draw; `index` is the retained-sample index when past burn-in.
    #[error("explosive overflow at step {step} (retained index {index:?})")]
    Overflow { step: usize, index: Option<usize> },

    #[error("degenerate segment: all lagged values are zero on [{start}, {end}]")]
    DegenerateSegment { start: usize, end: usize },

    #[error("degenerate series: {0}")]
    DegenerateSeries(String),

    #[error("trimmed window contains no usable grid point")]
    EmptyWindow,

    #[error("incompatible configuration: {0}")]
    IncompatibleConfig(String),

    #[error("{path}: line {line}: {message}")]
    Data {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("critical-value cache: {0}")]
    Cache(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for errors caused by the data rather than by how the library was called.
    pub fn is_data_error(&self) -> bool {
        matches!(
            self,
            Error::SeriesTooShort { .. }
                | Error::Overflow { .. }
                | Error::DegenerateSegment { .. }
                | Error::DegenerateSeries(_)
                | Error::EmptyWindow
                | Error::Data { .. }
                | Error::Io(_)
                | Error::Csv(_)
        )
    }

    pub fn is_degenerate(&self) -> bool {
        matches!(
            self,
            Error::DegenerateSegment { .. } | Error::DegenerateSeries(_) | Error::EmptyWindow
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
