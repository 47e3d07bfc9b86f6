//! Minimal reverse-mode automatic differentiation over dense `f64` tensors.

mod graph;
mod loss;
mod tensor;
mod weights;

pub use graph::{Graph, Var};
pub use loss::{one_hot, soft_cross_entropy, DISTRIBUTION_TOLERANCE, LOG_FLOOR};
pub use tensor::Tensor;
pub use weights::{flat_values, BoundWeights, WeightSet};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AutodiffError {
    #[error("{op}: shape mismatch {left:?} vs {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("{op}: unsupported shape {shape:?}")]
    InvalidShape { op: &'static str, shape: Vec<usize> },
    #[error("expected {expected} values, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("{op}: non-finite value")]
    NonFinite { op: &'static str },
    #[error("parameter `{0}` bound twice")]
    DuplicateParameter(String),
    #[error("unknown parameter `{0}`")]
    UnknownParameter(String),
    #[error("parameter `{0}` is not bound")]
    UnboundParameter(String),
    #[error("loss must be scalar, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("target row {row} is not a distribution (sum {sum})")]
    NotADistribution { row: usize, sum: f64 },
    #[error("label {label} out of range for {num_classes} classes")]
    LabelOutOfRange { label: usize, num_classes: usize },
}

/// Row-wise softmax of a plain tensor.
pub fn softmax_rows(t: &Tensor) -> Tensor {
    let n = t.cols();
    let mut out = Vec::with_capacity(t.len());
    for row in t.data().chunks(n) {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = row.iter().map(|&x| (x - max).exp()).collect();
        let z: f64 = exps.iter().sum();
        out.extend(exps.into_iter().map(|e| e / z));
    }
    Tensor::from_parts(t.shape().to_vec(), out)
}

pub fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}
