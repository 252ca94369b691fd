use thiserror::Error;

use crate::numerics::ActivationKind;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: shape mismatch between {left:?} and {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },

    #[error("{0:?} has no usable derivative")]
    UnsupportedDerivative(ActivationKind),

    #[error("target row {row} is not one-hot")]
    NotOneHot { row: usize },

    #[error("matrix is not square: {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },

    #[error("matrix is not symmetric (max asymmetry {max_diff:e})")]
    NotSymmetric { max_diff: f64 },

    #[error("non-finite value in {stage} at layer {layer}")]
    NonFinite { stage: &'static str, layer: usize },

    #[error("invalid network spec: {0}")]
    InvalidSpec(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("malformed {what} at byte offset {offset}: {msg}")]
    Format {
        what: &'static str,
        offset: usize,
        msg: String,
    },

    #[error("csv row {row}, column {col}: {msg}")]
    Csv { row: usize, col: usize, msg: String },

    #[error("inadmissible problem: gamma = {gamma} must be < 2*xi/(3(K-1)) = {limit}")]
    Inadmissible { gamma: f64, limit: f64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
