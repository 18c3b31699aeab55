//! Error type shared by all modules of the crate.

use thiserror::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Error, Debug)]
pub enum Error {
    /// A named column is missing or the file layout is unusable.
    #[error("schema error: {0}")]
    Schema(String),

    /// Input values violate a documented contract (e.g. non-binary event flag).
    #[error("validation error: {0}")]
    Validation(String),

    /// Too few rows / empty collection where at least one element is required.
    #[error("size error: {0}")]
    Size(String),

    /// Scalar argument outside its admissible domain.
    #[error("domain error: {0}")]
    Domain(String),

    /// Matrix/vector dimensions do not line up.
    #[error("shape error: {0}")]
    Shape(String),

    /// A censored label whose admissible set of interval distributions is empty.
    #[error("unrepresentable label: {0}")]
    UnrepresentableLabel(String),

    /// Metric has no admissible pairs / evaluation points.
    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    /// Training produced a non-finite loss.
    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("shape error: {0}")]
    NdShape(#[from] ndarray::ShapeError),

    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),
}
