use std::fmt;

use thiserror::Error;

/// Every failure the library can report.
///
/// The variants are grouped by the exit-code family the CLI maps them to:
/// usage/config, data, numeric, and internal.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid quadrature order {0}: expected 1..=64")]
    InvalidOrder(usize),

    #[error("non-finite value in {context} (at {at})")]
    NumericDomain { context: String, at: f64 },

    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    Shape {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("contract violated: {0}")]
    Contract(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("degenerate data: {0}")]
    DegenerateData(String),

    #[error("ingestion error in column `{column}` (line {line}): {message}")]
    Ingestion {
        column: String,
        line: usize,
        message: String,
    },

    #[error("censoring calibration failed: {0}")]
    Calibration(String),

    #[error("horizon error: {0}")]
    Horizon(String),

    #[error("metric undefined: {0}")]
    UndefinedMetric(String),

    #[error("training diverged at epoch {epoch}; last finite snapshot retained")]
    Diverged {
        epoch: usize,
        last_finite: Box<crate::training::TrainedModel>,
    },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Coarse classification used for process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Usage,
    Data,
    Numeric,
    Internal,
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::InvalidOrder(_) | Error::Config(_) => ErrorClass::Usage,
            Error::Shape { .. }
            | Error::DegenerateData(_)
            | Error::Ingestion { .. }
            | Error::Horizon(_)
            | Error::Checkpoint(_)
            | Error::Csv(_)
            | Error::Json(_) => ErrorClass::Data,
            Error::NumericDomain { .. }
            | Error::Diverged { .. }
            | Error::Calibration(_)
            | Error::UndefinedMetric(_) => ErrorClass::Numeric,
            Error::Contract(_) | Error::Io(_) => ErrorClass::Internal,
        }
    }

    pub(crate) fn numeric(context: impl fmt::Display, at: f64) -> Self {
        Error::NumericDomain {
            context: context.to_string(),
            at,
        }
    }

    pub(crate) fn shape(op: &'static str, left: &[usize], right: &[usize]) -> Self {
        Error::Shape {
            op,
            left: left.to_vec(),
            right: right.to_vec(),
        }
    }
}
