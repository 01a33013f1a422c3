//! Clean-subset re-adaptation: cross-entropy training of a linear head,
//! optionally jointly with a low-rank or full image-space transform.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{cross_entropy, evaluate, AdapterGrads, AdapterMode, AdapterParams, LinearClassifier, OptimizerState};
use crate::datagen::LabeledDataset;
use crate::error::{DeftError, Result};
use crate::kernels::{seeded_rng, Matrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase2Mode {
    LinearProbe,
    PeftSurrogate,
    FftSurrogate,
}

impl std::str::FromStr for Phase2Mode {
    type Err = DeftError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear_probe" | "lp" => Ok(Self::LinearProbe),
            "peft_surrogate" | "peft" => Ok(Self::PeftSurrogate),
            "fft_surrogate" | "fft" => Ok(Self::FftSurrogate),
            other => Err(DeftError::Config(format!("unknown phase-2 mode '{other}'"))),
        }
    }
}

impl std::fmt::Display for Phase2Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::LinearProbe => "linear_probe",
            Self::PeftSurrogate => "peft_surrogate",
            Self::FftSurrogate => "fft_surrogate",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Phase2Config {
    pub mode: Phase2Mode,
    pub epochs: usize,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub rank: usize,
    pub residual_scale: f64,
    /// Keep the adapter at its initialization and train only the head.
    pub freeze_adapter: bool,
    pub seed: u64,
}

impl Default for Phase2Config {
    fn default() -> Self {
        Self {
            mode: Phase2Mode::FftSurrogate,
            epochs: 10,
            lr: 5e-4,
            momentum: 0.9,
            weight_decay: 5e-4,
            batch_size: 64,
            rank: 8,
            residual_scale: 0.1,
            freeze_adapter: false,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Phase2Epoch {
    pub epoch: usize,
    pub loss: f64,
    pub test_acc: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Phase2Output {
    pub classifier: LinearClassifier,
    pub adapter: AdapterParams,
    pub trace: Vec<Phase2Epoch>,
    /// Highest evaluation accuracy over the epochs (initial model when `epochs == 0`).
    pub best_acc: Option<f64>,
    /// Evaluation accuracy after the final epoch.
    pub last_acc: Option<f64>,
}

/// Seed for adapter initialization, decorrelated from the shuffling stream.
pub(crate) fn adapter_seed(seed: u64) -> u64 {
    seed ^ 0x9E37_79B9_7F4A_7C15
}

fn initial_adapter(config: &Phase2Config, dim: usize) -> Result<AdapterParams> {
    match config.mode {
        Phase2Mode::LinearProbe => Ok(AdapterParams::identity(dim)),
        Phase2Mode::PeftSurrogate => AdapterParams::low_rank(dim, config.rank, config.residual_scale, adapter_seed(config.seed)),
        Phase2Mode::FftSurrogate => Ok(AdapterParams::full(dim)),
    }
}

pub fn train_phase2(
    ds: &LabeledDataset,
    clean_mask: &[bool],
    config: &Phase2Config,
    eval: Option<&LabeledDataset>,
) -> Result<Phase2Output> {
    train_phase2_observed(ds, clean_mask, config, eval, &mut |_| {})
}

/// [`train_phase2`] reporting every training-sample index it reads to `visit`.
pub fn train_phase2_observed(
    ds: &LabeledDataset,
    clean_mask: &[bool],
    config: &Phase2Config,
    eval: Option<&LabeledDataset>,
    visit: &mut dyn FnMut(usize),
) -> Result<Phase2Output> {
    if clean_mask.len() != ds.len() {
        return Err(DeftError::dim(ds.len(), clean_mask.len()));
    }
    if config.batch_size == 0 {
        return Err(DeftError::Config("batch size must be positive".into()));
    }
    let mut indices: Vec<usize> = (0..ds.len()).filter(|&i| clean_mask[i]).collect();
    if indices.is_empty() {
        return Err(DeftError::EmptyInput("phase-2 training subset is empty".into()));
    }
    if let Some(e) = eval {
        if e.dim != ds.dim {
            return Err(DeftError::dim(ds.dim, e.dim));
        }
    }

    let mut classifier = LinearClassifier::zeros(ds.num_classes, ds.dim);
    let mut adapter = initial_adapter(config, ds.dim)?;
    let train_adapter = adapter.mode != AdapterMode::Identity && !config.freeze_adapter;
    let mut opt = OptimizerState::new(config.lr, config.momentum, config.weight_decay)?;
    let mut rng = seeded_rng(config.seed);

    let evaluate_now = |c: &LinearClassifier, a: &AdapterParams| -> Result<Option<f64>> { eval.map(|e| evaluate(c, a, e)).transpose() };

    let mut trace = Vec::with_capacity(config.epochs);
    let mut best: Option<f64> = None;
    let mut last = evaluate_now(&classifier, &adapter)?;
    if config.epochs == 0 {
        best = last;
    }

    for epoch in 1..=config.epochs {
        indices.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for (batch_idx, batch) in indices.chunks(config.batch_size).enumerate() {
            let mut g_w = Matrix::zeros(classifier.weights.rows, classifier.weights.cols);
            let mut g_b = vec![0.0; classifier.bias.len()];
            let mut g_ad = AdapterGrads::zeros_like(&adapter);
            let mut batch_loss = 0.0;
            for &i in batch {
                visit(i);
                let x = ds.embedding_f64(i);
                let cache = adapter.forward_cached(&x)?;
                let logits = classifier.logits(&cache.out);
                let (loss, dz) = cross_entropy(&logits, ds.given_labels[i])?;
                batch_loss += loss;
                for (k, &dzk) in dz.iter().enumerate() {
                    g_b[k] += dzk;
                    for (g, &f) in g_w.row_mut(k).iter_mut().zip(&cache.out) {
                        *g += dzk * f;
                    }
                }
                if train_adapter {
                    let mut grad_out = vec![0.0; ds.dim];
                    for (k, &dzk) in dz.iter().enumerate() {
                        for (go, &w) in grad_out.iter_mut().zip(classifier.weights.row(k)) {
                            *go += dzk * w;
                        }
                    }
                    adapter.backward(&x, &cache, &grad_out, &mut g_ad);
                }
            }
            if !batch_loss.is_finite() {
                return Err(DeftError::Divergence {
                    epoch,
                    batch: batch_idx,
                    message: "non-finite cross-entropy".into(),
                });
            }
            loss_sum += batch_loss;
            let inv = 1.0 / batch.len() as f64;
            g_w.data.iter_mut().for_each(|v| *v *= inv);
            g_b.iter_mut().for_each(|v| *v *= inv);
            g_ad.scale(inv);

            let step = if train_adapter {
                let [a, b, w] = adapter.blocks_mut();
                opt.step(
                    &mut [&mut classifier.weights.data, &mut classifier.bias, a, b, w],
                    &[&g_w.data, &g_b, &g_ad.a.data, &g_ad.b.data, &g_ad.w.data],
                )
            } else {
                opt.step(&mut [&mut classifier.weights.data, &mut classifier.bias], &[&g_w.data, &g_b])
            };
            step.map_err(|e| e.at(epoch, batch_idx))?;
        }
        last = evaluate_now(&classifier, &adapter)?;
        if let Some(acc) = last {
            best = Some(best.map_or(acc, |b: f64| b.max(acc)));
        }
        trace.push(Phase2Epoch {
            epoch,
            loss: loss_sum / indices.len() as f64,
            test_acc: last,
        });
    }

    Ok(Phase2Output {
        classifier,
        adapter,
        trace,
        best_acc: best,
        last_acc: last,
    })
}

/// Per-sample cross-entropy of `classifier` on every sample's given label.
pub fn per_sample_losses(classifier: &LinearClassifier, adapter: &AdapterParams, ds: &LabeledDataset) -> Result<Vec<f64>> {
    (0..ds.len())
        .map(|i| {
            let feat = adapter.forward(&ds.embedding_f64(i))?;
            Ok(cross_entropy(&classifier.logits(&feat), ds.given_labels[i])?.0)
        })
        .collect()
}
