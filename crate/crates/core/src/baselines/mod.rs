//! Comparison selectors: zero-shot label match, per-batch small loss, and a
//! two-component Gaussian mixture over per-sample losses.

mod gmm;

pub use gmm::{fit_gmm_em, gmm_posterior_clean, select_gmm, GmmModel, VARIANCE_FLOOR};

use crate::detector::zero_shot_predict;
use crate::error::{DeftError, Result};
use crate::kernels::{Matrix, Temperature};

/// Clean iff the zero-shot prediction against `anchors` (one row per class)
/// equals the given label. The argmax does not depend on `tau`.
pub fn select_label_match(features: &Matrix, labels: &[usize], anchors: &Matrix, tau: Temperature) -> Result<Vec<bool>> {
    if labels.len() != features.rows {
        return Err(DeftError::dim(features.rows, labels.len()));
    }
    let (pred, _) = zero_shot_predict(features, anchors, tau)?;
    Ok(pred.iter().zip(labels).map(|(p, y)| p == y).collect())
}

fn check_ratio(r: f64) -> Result<()> {
    if !(0.0..1.0).contains(&r) {
        return Err(DeftError::Config(format!("small-loss ratio must be in [0, 1), got {r}")));
    }
    Ok(())
}

/// Within each batch of size `B` marks the `ceil((1 - r) * B)` smallest
/// losses clean; equal losses go to the smaller index. Batches must
/// partition `0..losses.len()`.
pub fn select_small_loss(losses: &[f64], r: f64, batches: &[Vec<usize>]) -> Result<Vec<bool>> {
    check_ratio(r)?;
    let n = losses.len();
    let mut seen = vec![false; n];
    let mut mask = vec![false; n];
    for batch in batches {
        for &i in batch {
            if i >= n || std::mem::replace(&mut seen[i], true) {
                return Err(DeftError::Config(format!("batches do not partition the index set (index {i})")));
            }
        }
        let keep = ((1.0 - r) * batch.len() as f64).ceil() as usize;
        let mut order = batch.clone();
        order.sort_by(|&a, &b| losses[a].total_cmp(&losses[b]).then(a.cmp(&b)));
        for &i in order.iter().take(keep) {
            mask[i] = true;
        }
    }
    if seen.iter().any(|s| !s) {
        return Err(DeftError::Config("batches do not cover every sample".into()));
    }
    Ok(mask)
}

/// Small-loss selection with the whole dataset as a single batch.
pub fn select_small_loss_global(losses: &[f64], r: f64) -> Result<Vec<bool>> {
    select_small_loss(losses, r, &[(0..losses.len()).collect()])
}

/// Consecutive index batches of size `batch_size`.
pub fn contiguous_batches(n: usize, batch_size: usize) -> Vec<Vec<usize>> {
    let idx: Vec<usize> = (0..n).collect();
    idx.chunks(batch_size.max(1)).map(<[usize]>::to_vec).collect()
}

/// Writes one `0`/`1` per line.
pub fn mask_to_string(mask: &[bool]) -> String {
    let mut s = String::with_capacity(mask.len() * 2);
    for &m in mask {
        s.push(if m { '1' } else { '0' });
        s.push('\n');
    }
    s
}

/// Parses the one-bit-per-line mask format; blank lines are ignored.
pub fn parse_mask(text: &str) -> Result<Vec<bool>> {
    let mut offset = 0u64;
    let mut out = Vec::new();
    for line in text.split_inclusive('\n') {
        match line.trim() {
            "" => {}
            "1" => out.push(true),
            "0" => out.push(false),
            other => {
                return Err(DeftError::Parse {
                    offset,
                    message: format!("mask entries must be 0 or 1, found '{other}'"),
                })
            }
        }
        offset += line.len() as u64;
    }
    Ok(out)
}
