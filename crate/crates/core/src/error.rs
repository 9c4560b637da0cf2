use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::baseline::BaselineError;
use crate::domain::DomainError;
use crate::eval::EvalError;
use crate::formats::FormatError;
use crate::maskops::MaskError;
use crate::scoring::ScoreError;
use crate::store::{DocumentError, StoreError};

/// Machine-readable error class shared by the HTTP API and the CLI.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorKind {
    NotFound,
    Conflict,
    InvalidInput,
    EmptyDataset,
    /// I/O or corrupt-store failures; never caused by the request itself.
    Internal,
}

impl ErrorKind {
    pub fn code(self) -> &'static str {
        match self {
            ErrorKind::NotFound => "not_found",
            ErrorKind::Conflict => "conflict",
            ErrorKind::InvalidInput => "invalid_input",
            ErrorKind::EmptyDataset => "empty_dataset",
            ErrorKind::Internal => "internal",
        }
    }
}

impl fmt::Display for ErrorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Domain(#[from] DomainError),
    #[error(transparent)]
    Mask(#[from] MaskError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Score(#[from] ScoreError),
    #[error(transparent)]
    Baseline(#[from] BaselineError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Document(#[from] DocumentError),
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error("{0}")]
    Invalid(String),
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        use ErrorKind::*;
        match self {
            Error::Domain(_) | Error::Mask(_) | Error::Document(_) | Error::Invalid(_) => {
                InvalidInput
            }
            Error::Eval(e) => eval_kind(e),
            Error::Score(e) => match e {
                ScoreError::NoCells => EmptyDataset,
                ScoreError::Eval(e) => eval_kind(e),
                _ => InvalidInput,
            },
            Error::Baseline(e) => match e {
                BaselineError::Io { .. } => Internal,
                _ => InvalidInput,
            },
            Error::Format(e) => format_kind(e),
            Error::Store(e) => match e {
                StoreError::NotFound(_) => NotFound,
                StoreError::Conflict { .. } => Conflict,
                StoreError::EmptyDataset => EmptyDataset,
                StoreError::Io { .. } | StoreError::Corrupt { .. } => Internal,
                StoreError::Format(e) => format_kind(e),
                StoreError::Invalid(_)
                | StoreError::DimensionOverflow { .. }
                | StoreError::Image(_)
                | StoreError::Document(_)
                | StoreError::Domain(_) => InvalidInput,
            },
        }
    }
}

fn eval_kind(e: &EvalError) -> ErrorKind {
    match e {
        EvalError::EmptyDataset => ErrorKind::EmptyDataset,
        EvalError::Inconsistent(_) => ErrorKind::Internal,
        _ => ErrorKind::InvalidInput,
    }
}

fn format_kind(e: &FormatError) -> ErrorKind {
    match e {
        FormatError::Io { source, .. } if source.kind() == std::io::ErrorKind::NotFound => {
            ErrorKind::NotFound
        }
        FormatError::Io { .. } => ErrorKind::Internal,
        _ => ErrorKind::InvalidInput,
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn codes() {
        let cases: Vec<(Error, &str)> = vec![
            (StoreError::NotFound("x".into()).into(), "not_found"),
            (
                StoreError::Conflict {
                    key: "k".into(),
                    base: 0,
                    latest: 1,
                }
                .into(),
                "conflict",
            ),
            (ScoreError::NoCells.into(), "empty_dataset"),
            (EvalError::EmptyDataset.into(), "empty_dataset"),
            (ScoreError::Eval(EvalError::EmptyDataset).into(), "empty_dataset"),
            (DomainError::MixedFamilies.into(), "invalid_input"),
            (MaskError::UndefinedIou.into(), "invalid_input"),
        ];
        for (e, code) in cases {
            assert_eq!(e.kind().code(), code, "{e}");
        }
    }
}
