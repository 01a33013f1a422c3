//! Detector training loop: warm-up on all samples with the given labels,
//! then per-epoch pseudo-labelling and clean-subset restriction of the
//! alignment loss.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::loss::{loss_dp, loss_sim, sample_complementary_labels};
use super::selection::{select_clean, zero_shot_predict, SelectionResult};
use super::{dataset_features, PromptPair};
use crate::adapt::{AdapterGrads, AdapterMode, AdapterParams, OptimizerState};
use crate::datagen::LabeledDataset;
use crate::error::{DeftError, Result};
use crate::harness::selection_metrics;
use crate::kernels::{seeded_rng, Matrix, Temperature};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectorConfig {
    pub tau: Temperature,
    /// Warm-up epochs: all samples, given labels as positive targets.
    pub warmup_epochs: usize,
    /// Total detector epochs, warm-up included.
    pub detect_epochs: usize,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    /// Weight of the positive (clean) term of the dual-prompt loss.
    pub lambda_pos: f64,
    /// Also require the zero-shot prediction to match the given label.
    pub consistency_constraint: bool,
    pub adapter_mode: AdapterMode,
    pub adapter_rank: usize,
    pub residual_scale: f64,
    pub seed: u64,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            tau: Temperature::default(),
            warmup_epochs: 1,
            detect_epochs: 10,
            lr: 3e-2,
            momentum: 0.9,
            weight_decay: 5e-4,
            batch_size: 64,
            lambda_pos: 1.0,
            consistency_constraint: false,
            adapter_mode: AdapterMode::LowRank,
            adapter_rank: 8,
            residual_scale: 0.1,
            seed: 0,
        }
    }
}

impl DetectorConfig {
    /// Settings for very high noise ratios: down-weighted positive term and
    /// a smaller learning rate.
    pub fn severe_noise() -> Self {
        Self {
            lambda_pos: 0.25,
            lr: 1e-2,
            ..Self::default()
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "default" => Ok(Self::default()),
            "severe-noise" | "severe_noise" => Ok(Self::severe_noise()),
            other => Err(DeftError::Config(format!("unknown detector preset '{other}'"))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(DeftError::Config(format!("detector lr must be positive, got {}", self.lr)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(DeftError::Config(format!("momentum must be in [0, 1), got {}", self.momentum)));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return Err(DeftError::Config("weight decay must be >= 0".into()));
        }
        if self.batch_size == 0 {
            return Err(DeftError::Config("batch size must be positive".into()));
        }
        if !(self.lambda_pos > 0.0 && self.lambda_pos <= 1.0) {
            return Err(DeftError::Config(format!("lambda_pos must be in (0, 1], got {}", self.lambda_pos)));
        }
        if self.warmup_epochs > self.detect_epochs {
            return Err(DeftError::Config(format!(
                "warm-up epochs ({}) exceed total detector epochs ({})",
                self.warmup_epochs, self.detect_epochs
            )));
        }
        Ok(())
    }

    /// The adapter the detector starts from.
    pub fn initial_adapter(&self, dim: usize) -> Result<AdapterParams> {
        match self.adapter_mode {
            AdapterMode::Identity => Ok(AdapterParams::identity(dim)),
            AdapterMode::LowRank => {
                AdapterParams::low_rank(dim, self.adapter_rank, self.residual_scale, crate::adapt::adapter_seed(self.seed))
            }
            AdapterMode::Full => Ok(AdapterParams::full(dim)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss_dp: f64,
    pub loss_sim: f64,
    pub n_selected: usize,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectorOutput {
    pub prompts: PromptPair,
    pub adapter: AdapterParams,
    pub selection: SelectionResult,
    pub trace: Vec<EpochRecord>,
}

fn adapted_features(inputs: &Matrix, adapter: &AdapterParams) -> Result<Matrix> {
    let mut out = Matrix::zeros(inputs.rows, inputs.cols);
    for i in 0..inputs.rows {
        out.row_mut(i).copy_from_slice(&adapter.forward(inputs.row(i))?);
    }
    Ok(out)
}

/// Trains the prompt pair and the adapter, then selects the clean subset
/// with the final parameters.
///
/// Epochs `1..=warmup_epochs` optimize the dual-prompt loss plus the
/// alignment loss on every sample with the given labels as positive
/// targets. Each later epoch first recomputes the zero-shot pseudo-labels
/// and the clean subset, then optimizes the dual-prompt loss on all samples
/// (pseudo-labels as positive targets) plus the alignment loss restricted to
/// the clean subset. Complementary labels are redrawn every epoch and
/// prompts are renormalized after every step.
///
/// Free prompt vectors see gradients of order `1 / tau`, so the optimizer
/// is fed the gradient of `tau * L`; the trace still reports `L`.
pub fn train_detector(ds: &LabeledDataset, config: &DetectorConfig, adapter: AdapterParams) -> Result<DetectorOutput> {
    config.validate()?;
    ds.validate()?;
    if ds.is_empty() {
        return Err(DeftError::EmptyInput("detector training set is empty".into()));
    }
    if adapter.dim != ds.dim {
        return Err(DeftError::dim(ds.dim, adapter.dim));
    }
    let tau = config.tau;
    let inputs = dataset_features(ds);
    let given = &ds.given_labels;
    let truth_mask = ds.true_clean_mask();

    let mut adapter = adapter;
    let mut prompts = PromptPair::init_from_features(&adapted_features(&inputs, &adapter)?, given, ds.num_classes, config.seed)?;
    let train_adapter = adapter.mode != AdapterMode::Identity;
    let mut opt = OptimizerState::new(config.lr, config.momentum, config.weight_decay)?;
    let mut rng = seeded_rng(config.seed);
    let mut order: Vec<usize> = (0..ds.len()).collect();
    let mut trace = Vec::with_capacity(config.detect_epochs);

    for epoch in 1..=config.detect_epochs {
        let warm = epoch <= config.warmup_epochs;
        let features = adapted_features(&inputs, &adapter)?;
        let (pseudo, _) = zero_shot_predict(&features, &prompts.positive, tau)?;
        let targets: Vec<usize> = if warm { given.clone() } else { pseudo.clone() };
        let sim_mask: Vec<bool> = if warm {
            vec![true; ds.len()]
        } else {
            select_clean(&features, given, &prompts, tau, config.consistency_constraint)?.clean_mask
        };
        let complementary = sample_complementary_labels(given, &pseudo, ds.num_classes, &mut rng)?;
        order.shuffle(&mut rng);

        let (mut dp_sum, mut sim_sum, mut sim_count) = (0.0, 0.0, 0usize);
        for (batch_idx, batch) in order.chunks(config.batch_size).enumerate() {
            let batch_features = if train_adapter {
                let mut m = Matrix::zeros(inputs.rows, inputs.cols);
                for &i in batch {
                    m.row_mut(i).copy_from_slice(&adapter.forward(inputs.row(i))?);
                }
                m
            } else {
                features.clone()
            };
            let dp = loss_dp(&batch_features, &prompts, tau, &targets, &complementary, config.lambda_pos, batch)?;
            let sim_batch: Vec<usize> = batch.iter().copied().filter(|&i| sim_mask[i]).collect();
            let sim = if sim_batch.is_empty() {
                None
            } else {
                Some(loss_sim(&inputs, &adapter, &prompts.positive, &targets, tau, &sim_batch)?)
            };

            let sim_loss = sim.as_ref().map_or(0.0, |s| s.loss);
            if !(dp.loss.is_finite() && sim_loss.is_finite()) {
                return Err(DeftError::Divergence {
                    epoch,
                    batch: batch_idx,
                    message: format!("non-finite detector loss (dp {}, sim {})", dp.loss, sim_loss),
                });
            }
            dp_sum += dp.loss * batch.len() as f64;
            sim_sum += sim_loss * sim_batch.len() as f64;
            sim_count += sim_batch.len();

            // Steps are taken on tau * L: cosine-unit gradients, so the
            // learning rate does not have to shrink with the temperature.
            let scale = tau.get();
            let mut grad_pos = dp.grad_positive;
            let mut grad_neg = dp.grad_negative;
            let mut grad_ad = match sim {
                Some(s) => {
                    for (g, v) in grad_pos.data.iter_mut().zip(&s.grad_positive.data) {
                        *g += v;
                    }
                    s.grad_adapter
                }
                None => AdapterGrads::zeros_like(&adapter),
            };
            grad_pos.data.iter_mut().chain(&mut grad_neg.data).for_each(|g| *g *= scale);
            grad_ad.scale(scale);
            let [a, b, w] = adapter.blocks_mut();
            opt.step(
                &mut [&mut prompts.positive.data, &mut prompts.negative.data, a, b, w],
                &[&grad_pos.data, &grad_neg.data, &grad_ad.a.data, &grad_ad.b.data, &grad_ad.w.data],
            )
            .map_err(|e| e.at(epoch, batch_idx))?;
            prompts.normalize().map_err(|_| DeftError::Divergence {
                epoch,
                batch: batch_idx,
                message: "a prompt collapsed to zero norm".into(),
            })?;
        }

        let features = adapted_features(&inputs, &adapter)?;
        let selection = select_clean(&features, given, &prompts, tau, config.consistency_constraint)?;
        let metrics = truth_mask
            .as_ref()
            .map(|t| selection_metrics(&selection.clean_mask, t))
            .transpose()?;
        trace.push(EpochRecord {
            epoch,
            loss_dp: dp_sum / ds.len() as f64,
            loss_sim: if sim_count == 0 { 0.0 } else { sim_sum / sim_count as f64 },
            n_selected: selection.n_selected(),
            precision: metrics.map(|m| m.precision),
            recall: metrics.map(|m| m.recall),
            f1: metrics.map(|m| m.f1),
        });
    }

    let features = adapted_features(&inputs, &adapter)?;
    let selection = select_clean(&features, given, &prompts, tau, config.consistency_constraint)?;
    Ok(DetectorOutput {
        prompts,
        adapter,
        selection,
        trace,
    })
}

/// Epoch trace as `epoch,loss_dp,loss_sim,n_selected,precision,recall,f1`;
/// metric columns are empty when true labels are unknown.
pub fn selection_trace_csv(trace: &[EpochRecord]) -> String {
    let fmt = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
    let mut out = String::from("epoch,loss_dp,loss_sim,n_selected,precision,recall,f1\n");
    for r in trace {
        out.push_str(&format!(
            "{},{:.9},{:.9},{},{},{},{}\n",
            r.epoch,
            r.loss_dp,
            r.loss_sim,
            r.n_selected,
            fmt(r.precision),
            fmt(r.recall),
            fmt(r.f1)
        ));
    }
    out
}
