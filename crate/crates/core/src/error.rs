use std::path::PathBuf;

use crate::triplet::TripletQuery;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid size: {0}")]
    InvalidSize(String),

    #[error("index {index} out of range for signal of length {len}")]
    Index { index: usize, len: usize },

    #[error("invalid triplet ({i}, {j}, {k}): indices must be pairwise distinct")]
    InvalidTriplet { i: usize, j: usize, k: usize },

    #[error("{path}: row {row}: {message}")]
    Format {
        path: PathBuf,
        row: usize,
        message: String,
    },

    #[error("budget of {budget} triplets exceeds universe of {universe}")]
    BudgetExceedsUniverse { budget: u64, universe: u64 },

    #[error("duplicate query {0}")]
    DuplicateQuery(TripletQuery),

    #[error("triplet {query} labeled by both {first} and {second}")]
    FusionConflict {
        query: TripletQuery,
        first: String,
        second: String,
    },

    #[error("label sets refer to different signal lengths ({0} and {1})")]
    LengthMismatch(usize, usize),

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("non-finite value in {0}")]
    NumericalOverflow(&'static str),

    #[error("matrix is not positive semi-definite (eigenvalue {0:e})")]
    NotPsd(f64),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("correlation undefined for constant input")]
    UndefinedCorrelation,

    #[error("probability {0} outside [0, 1]")]
    Domain(f64),

    #[error("{bins} bins requested for {labels} labels")]
    InvalidBins { bins: usize, labels: usize },

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
