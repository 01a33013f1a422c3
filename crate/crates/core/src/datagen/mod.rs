//! Labeled embedding datasets: synthetic generation, file IO and label
//! corruption.

mod io;
mod noise;
mod synthetic;

use serde::{Deserialize, Serialize};

use crate::error::{DeftError, Result};
use crate::kernels::{Embedding, NORM_TOLERANCE};

pub use io::{load_embeddings, read_embeddings, write_embeddings, write_embeddings_to, FileFormat};
pub use noise::{inject_instance_noise, inject_symmetric_noise, NoiseFamily, NoiseSpec};
pub use synthetic::{generate_synthetic, SyntheticConfig};

/// Embeddings with given (possibly noisy) labels and, when known, the
/// ground-truth labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledDataset {
    pub dim: usize,
    pub num_classes: usize,
    /// `N x dim`, row-major.
    pub embeddings: Vec<f32>,
    pub given_labels: Vec<usize>,
    pub true_labels: Option<Vec<usize>>,
    pub class_names: Vec<String>,
    pub normalized: bool,
}

pub fn default_class_names(k: usize) -> Vec<String> {
    (0..k).map(|i| format!("class_{i}")).collect()
}

impl LabeledDataset {
    pub fn new(
        dim: usize,
        num_classes: usize,
        embeddings: Vec<f32>,
        given_labels: Vec<usize>,
        true_labels: Option<Vec<usize>>,
    ) -> Result<Self> {
        let normalized = rows_are_unit(&embeddings, dim);
        let ds = Self {
            dim,
            num_classes,
            embeddings,
            given_labels,
            true_labels,
            class_names: default_class_names(num_classes),
            normalized,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn len(&self) -> usize {
        self.given_labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.given_labels.is_empty()
    }

    pub fn embedding(&self, i: usize) -> &[f32] {
        &self.embeddings[i * self.dim..(i + 1) * self.dim]
    }

    pub fn embedding_f64(&self, i: usize) -> Vec<f64> {
        self.embedding(i).iter().map(|&v| f64::from(v)).collect()
    }

    pub fn to_embedding(&self, i: usize) -> Embedding {
        Embedding {
            values: self.embedding(i).to_vec(),
            normalized: self.normalized,
        }
    }

    /// Labels used as ground truth for evaluation: true labels when known,
    /// given labels otherwise.
    pub fn reference_labels(&self) -> &[usize] {
        self.true_labels.as_deref().unwrap_or(&self.given_labels)
    }

    /// `true` where the given label equals the ground-truth label.
    pub fn true_clean_mask(&self) -> Option<Vec<bool>> {
        self.true_labels
            .as_ref()
            .map(|t| t.iter().zip(&self.given_labels).map(|(a, b)| a == b).collect())
    }

    /// Fraction of samples whose given label differs from the true label.
    pub fn noise_ratio(&self) -> Option<f64> {
        let mask = self.true_clean_mask()?;
        if mask.is_empty() {
            return Some(0.0);
        }
        let noisy = mask.iter().filter(|c| !**c).count();
        Some(noisy as f64 / mask.len() as f64)
    }

    pub fn subset(&self, indices: &[usize]) -> Self {
        let mut embeddings = Vec::with_capacity(indices.len() * self.dim);
        for &i in indices {
            embeddings.extend_from_slice(self.embedding(i));
        }
        Self {
            dim: self.dim,
            num_classes: self.num_classes,
            embeddings,
            given_labels: indices.iter().map(|&i| self.given_labels[i]).collect(),
            true_labels: self.true_labels.as_ref().map(|t| indices.iter().map(|&i| t[i]).collect()),
            class_names: self.class_names.clone(),
            normalized: self.normalized,
        }
    }

    /// Splits into the first `n_first` samples and the remainder.
    pub fn split_at(&self, n_first: usize) -> (Self, Self) {
        let n_first = n_first.min(self.len());
        let first: Vec<usize> = (0..n_first).collect();
        let rest: Vec<usize> = (n_first..self.len()).collect();
        (self.subset(&first), self.subset(&rest))
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim < 2 {
            return Err(DeftError::DataValidation(format!(
                "embedding dimension must be at least 2, got {}",
                self.dim
            )));
        }
        if self.num_classes == 0 {
            return Err(DeftError::DataValidation("class count must be positive".into()));
        }
        let n = self.given_labels.len();
        if self.embeddings.len() != n * self.dim {
            return Err(DeftError::DataValidation(format!(
                "expected {} embedding values for N={n}, d={}, got {}",
                n * self.dim,
                self.dim,
                self.embeddings.len()
            )));
        }
        if let Some(pos) = self.embeddings.iter().position(|v| !v.is_finite()) {
            return Err(DeftError::DataValidation(format!(
                "non-finite embedding value in row {}",
                pos / self.dim
            )));
        }
        let check = |labels: &[usize], what: &str| -> Result<()> {
            if let Some(&bad) = labels.iter().find(|&&l| l >= self.num_classes) {
                return Err(DeftError::DataValidation(format!(
                    "{what} label {bad} outside [0, {})",
                    self.num_classes
                )));
            }
            Ok(())
        };
        check(&self.given_labels, "given")?;
        if let Some(t) = &self.true_labels {
            if t.len() != n {
                return Err(DeftError::DataValidation(format!(
                    "true label count {} differs from sample count {n}",
                    t.len()
                )));
            }
            check(t, "true")?;
        }
        if self.class_names.len() != self.num_classes {
            return Err(DeftError::DataValidation(format!(
                "{} class names for {} classes",
                self.class_names.len(),
                self.num_classes
            )));
        }
        if self.normalized && !rows_are_unit(&self.embeddings, self.dim) {
            return Err(DeftError::DataValidation(
                "dataset flagged normalized but a row norm is outside tolerance".into(),
            ));
        }
        Ok(())
    }
}

pub(crate) fn rows_are_unit(embeddings: &[f32], dim: usize) -> bool {
    dim > 0
        && embeddings.chunks(dim).all(|row| {
            let n: f64 = row.iter().map(|&v| f64::from(v) * f64::from(v)).sum::<f64>().sqrt();
            (n - 1.0).abs() <= NORM_TOLERANCE
        })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn validate_rejects_out_of_range_labels() {
        let err = LabeledDataset::new(2, 2, vec![1.0, 0.0, 0.0, 1.0], vec![0, 2], None);
        assert!(matches!(err, Err(DeftError::DataValidation(_))));
    }

    #[test]
    fn validate_rejects_nan() {
        let err = LabeledDataset::new(2, 2, vec![f32::NAN, 0.0], vec![0], None);
        assert!(matches!(err, Err(DeftError::DataValidation(_))));
    }

    #[test]
    fn noise_ratio_counts_disagreements() {
        let ds = LabeledDataset::new(
            2,
            2,
            vec![1.0, 0.0, 0.0, 1.0, 1.0, 0.0, 0.0, 1.0],
            vec![0, 0, 1, 1],
            Some(vec![0, 1, 1, 1]),
        )
        .unwrap();
        assert_eq!(ds.noise_ratio(), Some(0.25));
        assert!(ds.normalized);
        assert_eq!(ds.true_clean_mask().unwrap(), vec![true, false, true, true]);
    }

    #[test]
    fn subset_and_split_keep_rows_aligned() {
        let ds = LabeledDataset::new(2, 3, vec![1.0, 0.0, 0.0, 1.0, 0.6, 0.8], vec![0, 1, 2], Some(vec![0, 1, 2])).unwrap();
        let sub = ds.subset(&[2, 0]);
        assert_eq!(sub.embedding(0), &[0.6, 0.8]);
        assert_eq!(sub.given_labels, vec![2, 0]);
        let (a, b) = ds.split_at(1);
        assert_eq!(a.len(), 1);
        assert_eq!(b.len(), 2);
    }
}
