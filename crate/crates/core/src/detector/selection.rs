//! Zero-shot prediction, learned thresholds and the clean-subset criterion.

use serde::{Deserialize, Serialize};

use super::PromptPair;
use crate::error::{DeftError, Result};
use crate::kernels::{argmax, cosine_sim, sigmoid, softmax_over_sims, Matrix, Temperature};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionResult {
    pub clean_mask: Vec<bool>,
    /// `cos(f_i, P_{y_i})`.
    pub pos_sim: Vec<f64>,
    /// `phi_i = cos(f_i, Q_{y_i})`.
    pub threshold: Vec<f64>,
    pub clean_prob: Vec<f64>,
    pub pseudo_labels: Vec<usize>,
}

impl SelectionResult {
    pub fn n_selected(&self) -> usize {
        self.clean_mask.iter().filter(|m| **m).count()
    }
}

fn check_dims(features: &Matrix, classes: &Matrix) -> Result<()> {
    if features.cols != classes.cols {
        return Err(DeftError::dim(classes.cols, features.cols));
    }
    if classes.rows == 0 {
        return Err(DeftError::EmptyInput("no class embeddings".into()));
    }
    Ok(())
}

/// Softmax over the cosine similarities to every class embedding; the
/// pseudo-label is the argmax with ties going to the smallest class id.
pub fn zero_shot_predict(features: &Matrix, class_embeddings: &Matrix, tau: Temperature) -> Result<(Vec<usize>, Matrix)> {
    check_dims(features, class_embeddings)?;
    let k = class_embeddings.rows;
    let mut probs = Matrix::zeros(features.rows, k);
    let mut labels = Vec::with_capacity(features.rows);
    for i in 0..features.rows {
        let f = features.row(i);
        let sims = (0..k).map(|c| cosine_sim(f, class_embeddings.row(c))).collect::<Result<Vec<_>>>()?;
        labels.push(argmax(&sims));
        probs.row_mut(i).copy_from_slice(&softmax_over_sims(&sims, tau)?);
    }
    Ok((labels, probs))
}

/// Learned threshold `phi_i = cos(f_i, Q_{y_i})`.
pub fn threshold(i: usize, features: &Matrix, labels: &[usize], prompts: &PromptPair) -> Result<f64> {
    check_dims(features, &prompts.negative)?;
    let y = labels[i];
    if y >= prompts.num_classes() {
        return Err(DeftError::DataValidation(format!("label {y} has no prompt")));
    }
    cosine_sim(features.row(i), prompts.negative.row(y))
}

/// Two-way softmax of positive against negative similarity at temperature
/// `tau`. Returns `(pos_sim, neg_sim, p_clean)`.
///
/// When the positive similarity is strictly larger the probability is kept
/// strictly above one half even if the scaled gap underflows, so that
/// `p_clean > 0.5` and `pos_sim > neg_sim` always agree.
pub(crate) fn clean_prob_at(f: &[f64], prompts: &PromptPair, class: usize, tau: Temperature) -> Result<(f64, f64, f64)> {
    let pos = cosine_sim(f, prompts.positive.row(class))?;
    let neg = cosine_sim(f, prompts.negative.row(class))?;
    let gap = pos - neg;
    let mut p = sigmoid(gap / tau.get());
    if gap > 0.0 && p <= 0.5 {
        p = 0.5f64.next_up();
    } else if gap <= 0.0 && p > 0.5 {
        p = 0.5;
    }
    Ok((pos, neg, p))
}

/// `p_i = sigmoid((cos(f_i, P_{y_i}) - cos(f_i, Q_{y_i})) / tau)` for every sample.
pub fn clean_probability(features: &Matrix, labels: &[usize], prompts: &PromptPair, tau: Temperature) -> Result<Vec<f64>> {
    check_dims(features, &prompts.positive)?;
    (0..features.rows)
        .map(|i| clean_prob_at(features.row(i), prompts, labels[i], tau).map(|t| t.2))
        .collect()
}

/// Clean iff `cos(f_i, P_{y_i}) > phi_i` (exact ties are noisy). With the
/// consistency constraint the zero-shot prediction must also equal `y_i`.
pub fn select_clean(
    features: &Matrix,
    labels: &[usize],
    prompts: &PromptPair,
    tau: Temperature,
    consistency_constraint: bool,
) -> Result<SelectionResult> {
    check_dims(features, &prompts.positive)?;
    if labels.len() != features.rows {
        return Err(DeftError::dim(features.rows, labels.len()));
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= prompts.num_classes()) {
        return Err(DeftError::DataValidation(format!("label {bad} has no prompt")));
    }
    let (pseudo_labels, _) = zero_shot_predict(features, &prompts.positive, tau)?;
    let n = features.rows;
    let mut out = SelectionResult {
        clean_mask: Vec::with_capacity(n),
        pos_sim: Vec::with_capacity(n),
        threshold: Vec::with_capacity(n),
        clean_prob: Vec::with_capacity(n),
        pseudo_labels,
    };
    for (i, &y) in labels.iter().enumerate() {
        let (pos, neg, p) = clean_prob_at(features.row(i), prompts, y, tau)?;
        let mut clean = pos > neg;
        if consistency_constraint {
            clean &= out.pseudo_labels[i] == y;
        }
        out.clean_mask.push(clean);
        out.pos_sim.push(pos);
        out.threshold.push(neg);
        out.clean_prob.push(p);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::normalize;

    fn tau(t: f64) -> Temperature {
        Temperature::new(t).unwrap()
    }

    /// Prompts in d = 3 for two classes built so that `cos(e0, P_c)` and
    /// `cos(e0, Q_c)` take the requested values.
    fn prompts_with_sims(pos: f64, neg: f64) -> PromptPair {
        let row = |c: f64| vec![c, (1.0 - c * c).sqrt(), 0.0];
        let p = Matrix::from_rows(&[row(pos), row(0.0)]).unwrap();
        let q = Matrix::from_rows(&[row(neg), row(0.0)]).unwrap();
        PromptPair::new(p, q).unwrap()
    }

    fn e0() -> Matrix {
        Matrix::from_rows(&[vec![1.0, 0.0, 0.0]]).unwrap()
    }

    #[test]
    fn zero_shot_two_class_probabilities() {
        let p = prompts_with_sims(0.5, 0.0);
        let classes = Matrix::from_rows(&[p.positive.row(0).to_vec(), vec![0.3, (1.0f64 - 0.09).sqrt(), 0.0]]).unwrap();
        let (labels, probs) = zero_shot_predict(&e0(), &classes, tau(0.1)).unwrap();
        assert_eq!(labels, vec![0]);
        assert!((probs.get(0, 0) - 0.8808).abs() < 1e-4);
        assert!((probs.get(0, 1) - 0.1192).abs() < 1e-4);
    }

    #[test]
    fn equidistant_sample_ties_to_class_zero() {
        let classes = Matrix::from_rows(&[vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0], vec![0.0, -1.0, 0.0]]).unwrap();
        let (labels, probs) = zero_shot_predict(&e0(), &classes, tau(0.01)).unwrap();
        assert_eq!(labels, vec![0]);
        for c in 0..3 {
            assert!((probs.get(0, c) - 1.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn threshold_is_negative_cosine() {
        let feats = e0();
        let collinear = PromptPair::new(
            Matrix::from_rows(&[vec![0.0, 1.0, 0.0]]).unwrap(),
            Matrix::from_rows(&[vec![1.0, 0.0, 0.0]]).unwrap(),
        )
        .unwrap();
        assert_eq!(threshold(0, &feats, &[0], &collinear).unwrap(), 1.0);
        let orth = PromptPair::new(collinear.negative.clone(), collinear.positive.clone()).unwrap();
        assert_eq!(threshold(0, &feats, &[0], &orth).unwrap(), 0.0);

        let a = normalize(&[0.3, -0.2, 0.9]).unwrap();
        let b = normalize(&[-0.5, 0.4, 0.1]).unwrap();
        let p = PromptPair::new(
            Matrix::from_rows(std::slice::from_ref(&b)).unwrap(),
            Matrix::from_rows(std::slice::from_ref(&b)).unwrap(),
        )
        .unwrap();
        let f = Matrix::from_rows(std::slice::from_ref(&a)).unwrap();
        assert_eq!(threshold(0, &f, &[0], &p).unwrap(), cosine_sim(&a, &b).unwrap());
    }

    #[test]
    fn clean_probability_examples() {
        let feats = e0();
        let p = clean_probability(&feats, &[0], &prompts_with_sims(0.3, 0.3), tau(0.1)).unwrap();
        assert_eq!(p[0], 0.5);
        let p = clean_probability(&feats, &[0], &prompts_with_sims(0.6, 0.4), tau(0.1)).unwrap();
        assert!((p[0] - 0.8808).abs() < 1e-4);
        let p = clean_probability(&feats, &[0], &prompts_with_sims(0.4, 0.6), tau(0.1)).unwrap();
        assert!((p[0] - 0.1192).abs() < 1e-4);
    }

    #[test]
    fn selection_tie_is_noisy_and_gap_is_clean() {
        let feats = e0();
        let tie = select_clean(&feats, &[0], &prompts_with_sims(0.3, 0.3), tau(0.01), false).unwrap();
        assert_eq!(tie.clean_mask, vec![false]);
        let clean = select_clean(&feats, &[0], &prompts_with_sims(0.7, 0.3), tau(0.01), false).unwrap();
        assert_eq!(clean.clean_mask, vec![true]);
        assert!(clean.clean_prob[0] > 0.5);
    }

    #[test]
    fn consistency_constraint_excludes_disagreeing_prediction() {
        // Class 1's positive prompt is closer than class 0's, so the
        // zero-shot prediction is 1 although P_0 beats Q_0.
        let p = Matrix::from_rows(&[vec![0.6, 0.8, 0.0], vec![0.9, 0.0, (1.0f64 - 0.81).sqrt()]]).unwrap();
        let q = Matrix::from_rows(&[vec![0.2, 0.0, (1.0f64 - 0.04).sqrt()], vec![0.0, 1.0, 0.0]]).unwrap();
        let prompts = PromptPair::new(p, q).unwrap();
        let plain = select_clean(&e0(), &[0], &prompts, tau(0.01), false).unwrap();
        let constrained = select_clean(&e0(), &[0], &prompts, tau(0.01), true).unwrap();
        assert_eq!(plain.pseudo_labels, vec![1]);
        assert_eq!(plain.clean_mask, vec![true]);
        assert_eq!(constrained.clean_mask, vec![false]);
    }

    #[test]
    fn tiny_positive_gap_still_above_half() {
        let prompts = PromptPair::new(
            Matrix::from_rows(&[vec![1e-300, 1.0]]).unwrap(),
            Matrix::from_rows(&[vec![0.0, 1.0]]).unwrap(),
        )
        .unwrap();
        let feats = Matrix::from_rows(&[vec![1.0, 0.0]]).unwrap();
        let sel = select_clean(&feats, &[0], &prompts, tau(0.01), false).unwrap();
        assert!(sel.pos_sim[0] > sel.threshold[0]);
        assert!(sel.clean_mask[0]);
        assert!(sel.clean_prob[0] > 0.5);
    }

    #[test]
    fn dimension_mismatch() {
        let prompts = prompts_with_sims(0.2, 0.1);
        let feats = Matrix::from_rows(&[vec![1.0, 0.0]]).unwrap();
        assert!(matches!(
            select_clean(&feats, &[0], &prompts, tau(0.1), false),
            Err(DeftError::Dimension { .. })
        ));
    }
}
