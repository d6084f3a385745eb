use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("index ({user}, {item}) outside a {n_users}x{n_items} matrix")]
    IndexOutOfRange {
        user: usize,
        item: usize,
        n_users: usize,
        n_items: usize,
    },
    #[error("rating {rating} outside the scale 1..={max_rating}")]
    RatingOutOfRange { rating: i64, max_rating: u8 },
    #[error("entry ({0}, {1}) is already observed")]
    AlreadyObserved(usize, usize),
    #[error("entry ({0}, {1}) is not observed")]
    NotObserved(usize, usize),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("rating scale 1..={0} is not supported here (needs at least {1} levels)")]
    UnsupportedScale(u8, u8),
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("degenerate rating distribution: {0}")]
    DegenerateDistribution(String),
    #[error("training diverged at step {step}: {reason}")]
    Divergence { step: usize, reason: String },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("format error: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
