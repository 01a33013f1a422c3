//! Detector objectives with hand-derived gradients.
//!
//! Both losses are averaged over the sample indices they are given, so a
//! mini-batch is just an index slice.

use rand::Rng;

use super::PromptPair;
use crate::adapt::{AdapterGrads, AdapterParams};
use crate::error::{DeftError, Result};
use crate::kernels::{cosine_sim, cosine_with_grad, log_sum_exp_scaled, sigmoid, softmax_scaled, softplus, DeftRng, Matrix, Temperature};

/// Probabilities are clamped to `[PROB_CLAMP, 1 - PROB_CLAMP]` before logs.
pub const PROB_CLAMP: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct DpLoss {
    pub loss: f64,
    pub grad_positive: Matrix,
    pub grad_negative: Matrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimLoss {
    pub loss: f64,
    pub grad_positive: Matrix,
    pub grad_adapter: AdapterGrads,
}

/// Draws `ybar_i` uniformly from `[K] \ {y_i, yhat_i}`, or from `[K] \ {y_i}`
/// when that leaves nothing.
pub fn sample_complementary_labels(given: &[usize], pseudo: &[usize], num_classes: usize, rng: &mut DeftRng) -> Result<Vec<usize>> {
    if num_classes < 2 {
        return Err(DeftError::Config("complementary labels need at least two classes".into()));
    }
    if given.len() != pseudo.len() {
        return Err(DeftError::dim(given.len(), pseudo.len()));
    }
    Ok(given
        .iter()
        .zip(pseudo)
        .map(|(&y, &yh)| {
            let mut excluded = [y, yh];
            excluded.sort_unstable();
            let distinct = if excluded[0] == excluded[1] { 1 } else { 2 };
            let available = num_classes - distinct;
            let (excluded, available) = if available == 0 {
                ([y, y], num_classes - 1)
            } else {
                (excluded, available)
            };
            // Map a draw over the available classes onto [K], skipping the
            // excluded ids in increasing order.
            let mut c = rng.random_range(0..available);
            let mut last = usize::MAX;
            for &e in &excluded {
                if e != last && c >= e {
                    c += 1;
                }
                last = e;
            }
            c
        })
        .collect())
}

/// `ln((1 - PROB_CLAMP) / PROB_CLAMP)`: `sigmoid(x)` leaves
/// `[PROB_CLAMP, 1 - PROB_CLAMP]` exactly when `|x| > LOGIT_CLAMP`.
const LOGIT_CLAMP: f64 = 27.631_021_115_928_547;

/// `(cos(f, P_c) - cos(f, Q_c)) / tau`.
fn clean_logit(f: &[f64], prompts: &PromptPair, class: usize, inv_tau: f64) -> Result<f64> {
    Ok((cosine_sim(f, prompts.positive.row(class))? - cosine_sim(f, prompts.negative.row(class))?) * inv_tau)
}

/// Accumulates `scale * d x / d prompts` where
/// `x = (cos(f, P_c) - cos(f, Q_c)) / tau`.
fn add_gap_grad(f: &[f64], prompts: &PromptPair, class: usize, scale: f64, gp: &mut Matrix, gq: &mut Matrix) {
    let (_, dp) = cosine_with_grad(prompts.positive.row(class), f);
    let (_, dq) = cosine_with_grad(prompts.negative.row(class), f);
    for (g, v) in gp.row_mut(class).iter_mut().zip(&dp) {
        *g += scale * v;
    }
    for (g, v) in gq.row_mut(class).iter_mut().zip(&dq) {
        *g -= scale * v;
    }
}

/// Dual-prompt loss over the samples in `batch`:
///
/// ```text
/// mean_i [ lambda_pos * -log p_clean(i, yhat_i) + -log(1 - p_clean(i, ybar_i)) ]
/// ```
///
/// with `p_clean(i, k) = sigmoid((cos(f_i, P_k) - cos(f_i, Q_k)) / tau)`.
/// Gradients flow to both prompt matrices only; `features` are constants.
pub fn loss_dp(
    features: &Matrix,
    prompts: &PromptPair,
    tau: Temperature,
    positive_targets: &[usize],
    complementary: &[usize],
    lambda_pos: f64,
    batch: &[usize],
) -> Result<DpLoss> {
    if features.cols != prompts.dim() {
        return Err(DeftError::dim(prompts.dim(), features.cols));
    }
    if positive_targets.len() != features.rows || complementary.len() != features.rows {
        return Err(DeftError::dim(features.rows, positive_targets.len().min(complementary.len())));
    }
    if batch.is_empty() {
        return Err(DeftError::EmptyInput("dual-prompt loss over an empty batch".into()));
    }
    let (k, d) = (prompts.num_classes(), prompts.dim());
    let inv_tau = 1.0 / tau.get();
    let mut gp = Matrix::zeros(k, d);
    let mut gq = Matrix::zeros(k, d);
    let mut total = 0.0;
    for &i in batch {
        let f = features.row(i);
        let (yh, yb) = (positive_targets[i], complementary[i]);

        // Both terms are evaluated on the logit scale: forming 1 - p first
        // loses most of its digits once p is close to 1.
        let x = clean_logit(f, prompts, yh, inv_tau)?;
        total += lambda_pos * softplus(-x.max(-LOGIT_CLAMP));
        if x.abs() <= LOGIT_CLAMP {
            // d(-log sigmoid(x))/dx = -(1 - p)
            add_gap_grad(f, prompts, yh, -lambda_pos * sigmoid(-x) * inv_tau, &mut gp, &mut gq);
        }

        let x = clean_logit(f, prompts, yb, inv_tau)?;
        total += softplus(x.min(LOGIT_CLAMP));
        if x.abs() <= LOGIT_CLAMP {
            // d(-log(1 - sigmoid(x)))/dx = p
            add_gap_grad(f, prompts, yb, sigmoid(x) * inv_tau, &mut gp, &mut gq);
        }
    }
    let inv_n = 1.0 / batch.len() as f64;
    gp.data.iter_mut().for_each(|v| *v *= inv_n);
    gq.data.iter_mut().for_each(|v| *v *= inv_n);
    Ok(DpLoss {
        loss: total * inv_n,
        grad_positive: gp,
        grad_negative: gq,
    })
}

/// Image/text alignment loss over the samples in `batch`:
///
/// ```text
/// mean_i -log softmax_k( cos(adapter(x_i), P_k) / tau )[target_i]
/// ```
///
/// Gradients flow to every positive prompt and through the adapter.
pub fn loss_sim(
    inputs: &Matrix,
    adapter: &AdapterParams,
    positive: &Matrix,
    targets: &[usize],
    tau: Temperature,
    batch: &[usize],
) -> Result<SimLoss> {
    if batch.is_empty() {
        return Err(DeftError::EmptyInput("alignment loss over an empty subset".into()));
    }
    if inputs.cols != positive.cols {
        return Err(DeftError::dim(positive.cols, inputs.cols));
    }
    if targets.len() != inputs.rows {
        return Err(DeftError::dim(inputs.rows, targets.len()));
    }
    let (k, d) = (positive.rows, positive.cols);
    let inv_tau = 1.0 / tau.get();
    let mut gp = Matrix::zeros(k, d);
    let mut ga = AdapterGrads::zeros_like(adapter);
    let mut total = 0.0;
    for &i in batch {
        let x = inputs.row(i);
        let cache = adapter.forward_cached(x)?;
        let out = &cache.out;
        let mut sims = Vec::with_capacity(k);
        let mut grad_sims_out = Vec::with_capacity(k);
        for c in 0..k {
            let (s, g) = cosine_with_grad(out, positive.row(c));
            sims.push(s);
            grad_sims_out.push(g);
        }
        let y = targets[i];
        total += log_sum_exp_scaled(&sims, inv_tau) - sims[y] * inv_tau;
        let mut probs = softmax_scaled(&sims, inv_tau);
        probs[y] -= 1.0;

        let mut grad_out = vec![0.0; d];
        for c in 0..k {
            let coeff = probs[c] * inv_tau;
            let (_, dp) = cosine_with_grad(positive.row(c), out);
            for (g, v) in gp.row_mut(c).iter_mut().zip(&dp) {
                *g += coeff * v;
            }
            for (g, v) in grad_out.iter_mut().zip(&grad_sims_out[c]) {
                *g += coeff * v;
            }
        }
        adapter.backward(x, &cache, &grad_out, &mut ga);
    }
    let inv_n = 1.0 / batch.len() as f64;
    gp.data.iter_mut().for_each(|v| *v *= inv_n);
    ga.scale(inv_n);
    Ok(SimLoss {
        loss: total * inv_n,
        grad_positive: gp,
        grad_adapter: ga,
    })
}
