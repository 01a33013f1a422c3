//! Dual-prompt noisy-label detector.
//!
//! Every class `k` owns a positive prompt `P_k` and a negative prompt `Q_k`,
//! both free unit vectors in the embedding space. A sample with given label
//! `y` and (adapted) image feature `f` is clean when
//! `cos(f, P_y) > cos(f, Q_y)`: the negative prompt acts as a per-sample
//! learned threshold. Equivalently, the two-way softmax
//! `sigmoid((cos(f, P_y) - cos(f, Q_y)) / tau)` exceeds one half.

mod loss;
mod selection;
mod train;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::datagen::LabeledDataset;
use crate::error::{DeftError, Result};
use crate::kernels::{normalize, substream, Matrix};

pub use loss::{loss_dp, loss_sim, sample_complementary_labels, DpLoss, SimLoss, PROB_CLAMP};
pub use selection::{clean_probability, select_clean, threshold, zero_shot_predict, SelectionResult};
pub use train::{selection_trace_csv, train_detector, DetectorConfig, DetectorOutput, EpochRecord};

/// Per-class positive and negative prompt embeddings (`K x d` each).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptPair {
    pub positive: Matrix,
    pub negative: Matrix,
}

impl PromptPair {
    pub fn new(positive: Matrix, negative: Matrix) -> Result<Self> {
        if !positive.same_shape(&negative) {
            return Err(DeftError::dim(positive.data.len(), negative.data.len()));
        }
        Ok(Self { positive, negative })
    }

    pub fn num_classes(&self) -> usize {
        self.positive.rows
    }

    pub fn dim(&self) -> usize {
        self.positive.cols
    }

    pub fn normalize(&mut self) -> Result<()> {
        self.positive.normalize_rows()?;
        self.negative.normalize_rows()
    }

    /// Positive prompts start at the normalized mean of the samples carrying
    /// each given label; the negative prompt of class `k` starts at the
    /// normalized mean of the other classes' positives plus a small seeded
    /// perturbation, which keeps `Q_k` away from `P_k`.
    pub fn init_from_dataset(ds: &LabeledDataset, seed: u64) -> Result<Self> {
        let features = dataset_features(ds);
        Self::init_from_features(&features, &ds.given_labels, ds.num_classes, seed)
    }

    pub fn init_from_features(features: &Matrix, labels: &[usize], num_classes: usize, seed: u64) -> Result<Self> {
        let d = features.cols;
        let mut rng = substream(seed, 1);
        let mut sums = Matrix::zeros(num_classes, d);
        let mut counts = vec![0usize; num_classes];
        for (i, &y) in labels.iter().enumerate() {
            counts[y] += 1;
            for (s, &v) in sums.row_mut(y).iter_mut().zip(features.row(i)) {
                *s += v;
            }
        }
        let mut positive = Matrix::zeros(num_classes, d);
        for (k, &count) in counts.iter().enumerate() {
            let row = if count > 0 { normalize(sums.row(k)).ok() } else { None };
            let row = match row {
                Some(r) => r,
                None => loop {
                    let v: Vec<f64> = (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
                    if let Ok(u) = normalize(&v) {
                        break u;
                    }
                },
            };
            positive.row_mut(k).copy_from_slice(&row);
        }

        let total: Vec<f64> = (0..d).map(|j| (0..num_classes).map(|k| positive.get(k, j)).sum()).collect();
        let noise_std = 0.05 / (d as f64).sqrt();
        let mut negative = Matrix::zeros(num_classes, d);
        for k in 0..num_classes {
            let v: Vec<f64> = (0..d)
                .map(|j| {
                    let others = if num_classes > 1 {
                        total[j] - positive.get(k, j)
                    } else {
                        -positive.get(k, j)
                    };
                    others + noise_std * rng.sample::<f64, _>(StandardNormal)
                })
                .collect();
            negative.row_mut(k).copy_from_slice(&normalize(&v)?);
        }
        Self::new(positive, negative)
    }
}

/// Widens the dataset embeddings into an `N x d` `f64` matrix.
pub fn dataset_features(ds: &LabeledDataset) -> Matrix {
    Matrix {
        rows: ds.len(),
        cols: ds.dim,
        data: ds.embeddings.iter().map(|&v| f64::from(v)).collect(),
    }
}
