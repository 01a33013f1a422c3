//! Linear classifier head and the cross-entropy loss.

use serde::{Deserialize, Serialize};

use crate::datagen::LabeledDataset;
use crate::error::{DeftError, Result};
use crate::kernels::{argmax, dot, log_sum_exp_scaled, softmax_scaled, Matrix};

use super::AdapterParams;

/// `z = W x + b`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearClassifier {
    pub weights: Matrix,
    pub bias: Vec<f64>,
}

impl LinearClassifier {
    /// All-zero head: every logit ties, so predictions start at class 0.
    pub fn zeros(num_classes: usize, dim: usize) -> Self {
        Self {
            weights: Matrix::zeros(num_classes, dim),
            bias: vec![0.0; num_classes],
        }
    }

    /// Head whose rows are the given class embeddings (e.g. text anchors).
    pub fn from_rows(rows: Matrix) -> Self {
        let k = rows.rows;
        Self {
            weights: rows,
            bias: vec![0.0; k],
        }
    }

    pub fn num_classes(&self) -> usize {
        self.weights.rows
    }

    pub fn dim(&self) -> usize {
        self.weights.cols
    }

    pub fn logits(&self, x: &[f64]) -> Vec<f64> {
        (0..self.num_classes())
            .map(|k| dot(self.weights.row(k), x) + self.bias[k])
            .collect()
    }

    pub fn predict(&self, x: &[f64]) -> usize {
        argmax(&self.logits(x))
    }
}

/// `-log softmax(logits)[label]` and its gradient `softmax(logits) - onehot(label)`.
pub fn cross_entropy(logits: &[f64], label: usize) -> Result<(f64, Vec<f64>)> {
    if label >= logits.len() {
        return Err(DeftError::DataValidation(format!("label {label} outside [0, {})", logits.len())));
    }
    let loss = (log_sum_exp_scaled(logits, 1.0) - logits[label]).max(0.0);
    let mut grad = softmax_scaled(logits, 1.0);
    grad[label] -= 1.0;
    Ok((loss, grad))
}

/// Fraction of samples whose highest logit (ties to the smallest class)
/// matches the reference label.
pub fn evaluate(model: &LinearClassifier, adapter: &AdapterParams, ds: &LabeledDataset) -> Result<f64> {
    if model.dim() != ds.dim {
        return Err(DeftError::dim(model.dim(), ds.dim));
    }
    if ds.is_empty() {
        return Err(DeftError::EmptyInput("evaluation set is empty".into()));
    }
    let labels = ds.reference_labels();
    let mut correct = 0usize;
    for (i, &label) in labels.iter().enumerate() {
        let feat = adapter.forward(&ds.embedding_f64(i))?;
        if model.predict(&feat) == label {
            correct += 1;
        }
    }
    Ok(correct as f64 / ds.len() as f64)
}
