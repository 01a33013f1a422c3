use proptest::prelude::*;

use deft::adapt::AdapterParams;
use deft::baselines::{contiguous_batches, select_small_loss};
use deft::datagen::{generate_synthetic, inject_symmetric_noise, SyntheticConfig};
use deft::detector::{loss_dp, loss_sim, select_clean, PromptPair};
use deft::kernels::{dot, Matrix, Temperature};

fn unit_rows(rows: usize, cols: usize, raw: &[f64]) -> Matrix {
    let mut m = Matrix::from_vec(rows, cols, raw[..rows * cols].to_vec()).unwrap();
    m.normalize_rows().unwrap();
    m
}

/// Applies the Householder reflection `I - 2 v v^T / |v|^2` to every row.
fn reflect(m: &Matrix, v: &[f64]) -> Matrix {
    let vv = dot(v, v);
    let mut out = m.clone();
    for r in 0..m.rows {
        let c = 2.0 * dot(m.row(r), v) / vv;
        for (x, vi) in out.row_mut(r).iter_mut().zip(v) {
            *x -= c * vi;
        }
    }
    out
}

fn vec_strategy(len: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1.0f64..1.0, len).prop_filter("non-degenerate", |v| v.iter().all(|x| x.abs() > 1e-3))
}

const N: usize = 6;
const K: usize = 3;
const D: usize = 5;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn losses_are_rotation_invariant(
        f in vec_strategy(N * D),
        p in vec_strategy(K * D),
        q in vec_strategy(K * D),
        v in vec_strategy(D),
        tau in 0.02f64..1.0,
        labels in prop::collection::vec(0..K, N),
    ) {
        let tau = Temperature::new(tau).unwrap();
        let features = unit_rows(N, D, &f);
        let prompts = PromptPair::new(unit_rows(K, D, &p), unit_rows(K, D, &q)).unwrap();
        let comp: Vec<usize> = labels.iter().map(|y| (y + 1) % K).collect();
        let batch: Vec<usize> = (0..N).collect();
        let rotated = PromptPair::new(reflect(&prompts.positive, &v), reflect(&prompts.negative, &v)).unwrap();
        let rf = reflect(&features, &v);

        let a = loss_dp(&features, &prompts, tau, &labels, &comp, 0.5, &batch).unwrap().loss;
        let b = loss_dp(&rf, &rotated, tau, &labels, &comp, 0.5, &batch).unwrap().loss;
        prop_assert!((a - b).abs() <= 1e-9 * a.abs().max(1.0));

        let id = AdapterParams::identity(D);
        let a = loss_sim(&features, &id, &prompts.positive, &labels, tau, &batch).unwrap().loss;
        let b = loss_sim(&rf, &id, &rotated.positive, &labels, tau, &batch).unwrap().loss;
        prop_assert!((a - b).abs() <= 1e-9 * a.abs().max(1.0));
    }

    #[test]
    fn raising_positive_similarity_never_turns_clean_noisy(
        f in vec_strategy(D),
        p in vec_strategy(K * D),
        q in vec_strategy(K * D),
        y in 0..K,
        step in 0.05f64..1.0,
    ) {
        let features = unit_rows(1, D, &f);
        let prompts = PromptPair::new(unit_rows(K, D, &p), unit_rows(K, D, &q)).unwrap();
        let tau = Temperature::default();
        let before = select_clean(&features, &[y], &prompts, tau, false).unwrap();

        // Moving P_y toward the sample raises cos(f, P_y) and leaves Q untouched.
        let mut positive = prompts.positive.clone();
        for (pv, fv) in positive.row_mut(y).iter_mut().zip(features.row(0)) {
            *pv += step * fv;
        }
        positive.normalize_rows().unwrap();
        let moved = PromptPair::new(positive, prompts.negative.clone()).unwrap();
        let after = select_clean(&features, &[y], &moved, tau, false).unwrap();
        prop_assert!(after.pos_sim[0] >= before.pos_sim[0] - 1e-12);
        prop_assert!(!before.clean_mask[0] || after.clean_mask[0]);
    }

    #[test]
    fn symmetric_noise_flips_exact_count(n in 20usize..400, r in 0.0f64..0.95, seed in 0u64..1000) {
        let cfg = SyntheticConfig { n, dim: 8, num_classes: 5, seed, ..SyntheticConfig::default() };
        let (ds, _) = generate_synthetic(&cfg).unwrap();
        let (noisy, spec) = inject_symmetric_noise(&ds, r, seed).unwrap();
        let truth = noisy.true_labels.as_ref().unwrap();
        let flips = noisy.given_labels.iter().zip(truth).filter(|(g, t)| g != t).count();
        prop_assert_eq!(flips, (n as f64 * r).floor() as usize);
        prop_assert!((spec.realized_ratio - flips as f64 / n as f64).abs() < 1e-12);
    }

    #[test]
    fn small_loss_keeps_the_smallest_per_batch(
        losses in prop::collection::vec(0.0f64..5.0, 1..200),
        r in 0.0f64..0.99,
        bs in 1usize..40,
    ) {
        let batches = contiguous_batches(losses.len(), bs);
        let mask = select_small_loss(&losses, r, &batches).unwrap();
        for b in &batches {
            let keep = ((1.0 - r) * b.len() as f64).ceil() as usize;
            prop_assert_eq!(b.iter().filter(|&&i| mask[i]).count(), keep);
            let kept_max = b.iter().filter(|&&i| mask[i]).map(|&i| losses[i]).fold(f64::NEG_INFINITY, f64::max);
            let dropped_min = b.iter().filter(|&&i| !mask[i]).map(|&i| losses[i]).fold(f64::INFINITY, f64::min);
            prop_assert!(kept_max <= dropped_min);
        }
    }
}
