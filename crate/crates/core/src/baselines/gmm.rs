//! One-dimensional two-component Gaussian mixture fitted by EM.

use serde::{Deserialize, Serialize};

use crate::error::{DeftError, Result};

pub const VARIANCE_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GmmModel {
    pub means: [f64; 2],
    pub variances: [f64; 2],
    pub mixing_weights: [f64; 2],
    /// Log-likelihood of the data after initialization and after every
    /// EM iteration.
    pub log_likelihood_trace: Vec<f64>,
}

/// Relative size of a log-likelihood drop that is attributed to rounding.
const ROUNDING_SLACK: f64 = 1e-12;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

impl GmmModel {
    /// `ln(w_k) + ln N(x | mu_k, var_k)` for both components.
    fn weighted_log_densities(&self, x: f64) -> [f64; 2] {
        std::array::from_fn(|k| {
            let d = x - self.means[k];
            self.mixing_weights[k].ln() - 0.5 * (LN_2PI + self.variances[k].ln() + d * d / self.variances[k])
        })
    }

    /// Index of the component with the smaller mean (0 on a tie).
    pub fn clean_component(&self) -> usize {
        usize::from(self.means[1] < self.means[0])
    }

    fn log_likelihood(&self, xs: &[f64]) -> f64 {
        xs.iter()
            .map(|&x| {
                let [a, b] = self.weighted_log_densities(x);
                let m = a.max(b);
                m + ((a - m).exp() + (b - m).exp()).ln()
            })
            .sum()
    }
}

/// Posterior probability of the smaller-mean component.
pub fn gmm_posterior_clean(loss: f64, model: &GmmModel) -> f64 {
    let l = model.weighted_log_densities(loss);
    let c = model.clean_component();
    // 1 / (1 + exp(l_other - l_clean)), exactly 0.5 when they agree.
    1.0 / (1.0 + (l[1 - c] - l[c]).exp())
}

fn moments(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.max(VARIANCE_FLOOR))
}

/// Standard EM starting from the split at the median: the lower half seeds
/// component 0, the upper half component 1, with equal weights. Stops when
/// the log-likelihood gain drops below `tol` or after `max_iters`
/// iterations. A step that lowers the log-likelihood by no more than
/// rounding error counts as convergence and is discarded. Deterministic, so
/// no seed is needed.
pub fn fit_gmm_em(losses: &[f64], max_iters: usize, tol: f64) -> Result<GmmModel> {
    if losses.len() < 4 {
        return Err(DeftError::EmptyInput(format!("GMM needs at least 4 losses, got {}", losses.len())));
    }
    if let Some(bad) = losses.iter().find(|x| !x.is_finite()) {
        return Err(DeftError::DataValidation(format!("non-finite loss {bad}")));
    }
    let first = losses[0];
    if losses.iter().all(|&x| x == first) {
        return Err(DeftError::DegenerateInput("all losses are identical; no mixture structure".into()));
    }
    let mut sorted = losses.to_vec();
    sorted.sort_by(f64::total_cmp);
    let half = sorted.len() / 2;
    let (m0, v0) = moments(&sorted[..half]);
    let (m1, v1) = moments(&sorted[half..]);
    let mut model = GmmModel {
        means: [m0, m1],
        variances: [v0, v1],
        mixing_weights: [0.5, 0.5],
        log_likelihood_trace: Vec::new(),
    };
    let mut ll = model.log_likelihood(losses);
    model.log_likelihood_trace.push(ll);

    let n = losses.len() as f64;
    let mut resp = vec![0.0; losses.len()];
    for _ in 0..max_iters {
        for (r, &x) in resp.iter_mut().zip(losses) {
            let [a, b] = model.weighted_log_densities(x);
            *r = 1.0 / (1.0 + (b - a).exp());
        }
        let n0: f64 = resp.iter().sum();
        let n1 = n - n0;
        if n0 <= 0.0 || n1 <= 0.0 {
            break;
        }
        let mu0 = resp.iter().zip(losses).map(|(r, x)| r * x).sum::<f64>() / n0;
        let mu1 = resp.iter().zip(losses).map(|(r, x)| (1.0 - r) * x).sum::<f64>() / n1;
        let var0 = resp.iter().zip(losses).map(|(r, x)| r * (x - mu0).powi(2)).sum::<f64>() / n0;
        let var1 = resp.iter().zip(losses).map(|(r, x)| (1.0 - r) * (x - mu1).powi(2)).sum::<f64>() / n1;
        let previous = (model.means, model.variances, model.mixing_weights);
        model.means = [mu0, mu1];
        model.variances = [var0.max(VARIANCE_FLOOR), var1.max(VARIANCE_FLOOR)];
        model.mixing_weights = [n0 / n, n1 / n];
        let next = model.log_likelihood(losses);
        if next < ll && ll - next <= ROUNDING_SLACK * ll.abs().max(1.0) {
            // Converged below the resolution of the summed log-likelihood;
            // keep the earlier parameters rather than record a spurious dip.
            (model.means, model.variances, model.mixing_weights) = previous;
            break;
        }
        model.log_likelihood_trace.push(next);
        let gain = next - ll;
        ll = next;
        if gain < tol {
            break;
        }
    }
    Ok(model)
}

/// Clean iff the posterior of the smaller-mean component is strictly above
/// `threshold`.
pub fn select_gmm(losses: &[f64], model: &GmmModel, threshold: f64) -> Vec<bool> {
    losses.iter().map(|&x| gmm_posterior_clean(x, model) > threshold).collect()
}
