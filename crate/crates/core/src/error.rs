use std::io;
use std::path::PathBuf;

use thiserror::Error;

use crate::augment::AugmentError;
use crate::curve::CurveError;
use crate::embedding_format::FormatError;
use crate::frechet::FrechetError;
use crate::similarity::SimilarityError;

/// Process exit codes shared by every subcommand.
pub mod exit {
    pub const SUCCESS: i32 = 0;
    pub const VALIDATION: i32 = 2;
    pub const IO: i32 = 3;
    pub const NUMERIC: i32 = 4;
}

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error(transparent)]
    Similarity(#[from] SimilarityError),
    #[error(transparent)]
    Frechet(#[from] FrechetError),
    #[error(transparent)]
    Curve(#[from] CurveError),
    #[error(transparent)]
    Augment(#[from] AugmentError),
    #[error("configuration: {0}")]
    Config(String),
    #[error("inconsistent report: {0}")]
    Consistency(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

fn similarity_code(e: &SimilarityError) -> i32 {
    match e {
        SimilarityError::ZeroNorm(_) | SimilarityError::OutOfRange(_) => exit::NUMERIC,
        _ => exit::VALIDATION,
    }
}

fn frechet_code(e: &FrechetError) -> i32 {
    match e {
        FrechetError::NonFinite(_) | FrechetError::NotSymmetric { .. } => exit::NUMERIC,
        _ => exit::VALIDATION,
    }
}

impl Error {
    /// 2 for invalid input, 3 for I/O, 4 for numeric failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Format(e) if e.is_io() => exit::IO,
            Error::Format(_) => exit::VALIDATION,
            Error::Similarity(e) => similarity_code(e),
            Error::Frechet(e) => frechet_code(e),
            Error::Curve(CurveError::Frechet(e)) => frechet_code(e),
            Error::Curve(_) => exit::VALIDATION,
            Error::Augment(AugmentError::Io { .. }) => exit::IO,
            Error::Augment(AugmentError::Similarity(e)) => similarity_code(e),
            Error::Augment(_) => exit::VALIDATION,
            Error::Config(_) => exit::VALIDATION,
            Error::Consistency(_) => exit::NUMERIC,
            Error::Io { .. } => exit::IO,
        }
    }
}
