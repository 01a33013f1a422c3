//! Selection precision / recall / F1.

use serde::{Deserialize, Serialize};

use crate::error::{DeftError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SelectionMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub n_selected: usize,
    pub n_true_clean: usize,
}

/// Harmonic mean of precision and recall, 0 when both are 0.
pub fn f1_score(precision: f64, recall: f64) -> f64 {
    if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    }
}

/// Precision is 1 for an empty selection; recall is 0 when nothing is
/// truly clean.
pub fn selection_metrics(clean_mask: &[bool], true_clean: &[bool]) -> Result<SelectionMetrics> {
    if clean_mask.len() != true_clean.len() {
        return Err(DeftError::dim(true_clean.len(), clean_mask.len()));
    }
    let n_selected = clean_mask.iter().filter(|m| **m).count();
    let n_true_clean = true_clean.iter().filter(|m| **m).count();
    let hits = clean_mask.iter().zip(true_clean).filter(|(a, b)| **a && **b).count();
    let precision = if n_selected == 0 { 1.0 } else { hits as f64 / n_selected as f64 };
    let recall = if n_true_clean == 0 {
        0.0
    } else {
        hits as f64 / n_true_clean as f64
    };
    Ok(SelectionMetrics {
        precision,
        recall,
        f1: f1_score(precision, recall),
        n_selected,
        n_true_clean,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn set_example() {
        // selected {1,2,3}, truly clean {1,2,4}
        let sel = [false, true, true, true, false];
        let truth = [false, true, true, false, true];
        let m = selection_metrics(&sel, &truth).unwrap();
        assert!((m.precision - 2.0 / 3.0).abs() < 1e-12);
        assert!((m.recall - 2.0 / 3.0).abs() < 1e-12);
        assert!((m.f1 - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn empty_selection() {
        let m = selection_metrics(&[false, false], &[true, false]).unwrap();
        assert_eq!((m.precision, m.recall, m.f1), (1.0, 0.0, 0.0));
    }

    #[test]
    fn length_mismatch() {
        assert!(matches!(
            selection_metrics(&[true], &[true, false]),
            Err(DeftError::Dimension { .. })
        ));
    }

    proptest! {
        #[test]
        fn f1_symmetric_and_bounded(p in 0.0f64..=1.0, r in 0.0f64..=1.0) {
            let f = f1_score(p, r);
            prop_assert_eq!(f, f1_score(r, p));
            prop_assert!(f >= 0.0);
            prop_assert!(f <= (p + r) / 2.0 + 1e-15);
            prop_assert!(f >= p.min(r) - 1e-15 || p + r == 0.0);
        }
    }
}
