use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("enumeration budget exceeded: class has {cardinality} elements, budget is {budget}")]
    BudgetExceeded { cardinality: u128, budget: u128 },

    #[error("index {index} out of range for class of size {cardinality}")]
    IndexOutOfRange { index: u128, cardinality: u128 },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("hypotheses belong to different classes: {0}")]
    ClassMismatch(String),

    #[error("matrix is not symmetric positive definite: {0}")]
    NotPositiveDefinite(String),

    #[error("degenerate network at layer {layer}: inner matrix has condition number {condition:.3e} (min eigenvalue {min_eigenvalue:.3e})")]
    Degenerate { layer: usize, condition: f64, min_eigenvalue: f64 },

    #[error("bound is inapplicable: {0}")]
    Inapplicable(String),

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
