//! Differentiable classifiers trained by the federated clients.

mod groupnorm;
mod linear;

pub use groupnorm::{group_normalize, make_groupnorm_mlp, GroupNormMlp, GroupNormSpec};
pub use linear::{make_linear_model, LinearSoftmax};

use thiserror::Error;

use crate::data::Dataset;
use crate::types::ParameterVector;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("width {width} is not divisible into {groups} groups")]
    IndivisibleGroups { width: usize, groups: usize },
}

/// A classifier with a flat parameter vector.
pub trait Model: Send + Sync {
    fn num_params(&self) -> usize;

    fn feature_dim(&self) -> usize;

    fn num_classes(&self) -> usize;

    fn parameters(&self) -> ParameterVector;

    fn set_parameters(&mut self, params: &ParameterVector) -> Result<(), ModelError>;

    /// Class scores (logits) for one sample.
    fn forward(&self, x: &[f64]) -> Vec<f64>;

    /// Mean softmax cross-entropy over `indices` of `data`, and its gradient.
    fn loss_and_gradient(&self, data: &Dataset, indices: &[usize]) -> (f64, ParameterVector);

    fn clone_box(&self) -> Box<dyn Model>;

    /// Logits for a row-major batch; rows never interact.
    fn forward_batch(&self, rows: &[f64]) -> Vec<Vec<f64>> {
        rows.chunks_exact(self.feature_dim())
            .map(|x| self.forward(x))
            .collect()
    }
}

impl Clone for Box<dyn Model> {
    fn clone(&self) -> Self {
        self.clone_box()
    }
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Cross-entropy of `logits` against `label`, plus `softmax - onehot`.
pub(crate) fn cross_entropy(logits: &[f64], label: usize) -> (f64, Vec<f64>) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let log_sum = logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln() + max;
    let loss = log_sum - logits[label];
    let mut grad: Vec<f64> = logits.iter().map(|z| (z - log_sum).exp()).collect();
    grad[label] -= 1.0;
    (loss, grad)
}

fn argmax(v: &[f64]) -> usize {
    v.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &x)| if x > bv { (i, x) } else { (bi, bv) })
        .0
}

/// Accuracy and mean cross-entropy of `model` on `data`.
pub fn evaluate(model: &dyn Model, data: &Dataset) -> (f64, f64) {
    if data.is_empty() {
        return (0.0, 0.0);
    }
    let mut correct = 0usize;
    let mut loss = 0.0;
    for i in 0..data.len() {
        let logits = model.forward(data.row(i));
        let label = data.label(i);
        if argmax(&logits) == label {
            correct += 1;
        }
        loss += cross_entropy(&logits, label).0;
    }
    (correct as f64 / data.len() as f64, loss / data.len() as f64)
}

/// Takes one SGD step of size `lr` on `indices`, returning the batch loss.
pub fn sgd_step(model: &mut dyn Model, data: &Dataset, indices: &[usize], lr: f64) -> f64 {
    let (loss, grad) = model.loss_and_gradient(data, indices);
    let mut params = model.parameters().into_inner();
    for (p, g) in params.iter_mut().zip(grad.as_slice()) {
        *p -= lr * g;
    }
    model
        .set_parameters(&ParameterVector::from_vec_unchecked(params))
        .expect("gradient dim equals parameter dim");
    loss
}
