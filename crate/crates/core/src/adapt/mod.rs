//! Image-space adaptation surrogates, the linear head, SGD, and clean-subset
//! re-adaptation.

mod adapter;
mod checkpoint;
mod classifier;
mod optim;
mod phase2;

pub use adapter::{apply_adapter, AdapterGrads, AdapterMode, AdapterParams};
pub use checkpoint::{decode_checkpoint, encode_checkpoint, read_checkpoint, write_checkpoint, MODEL_MAGIC};
pub use classifier::{cross_entropy, evaluate, LinearClassifier};
pub use optim::{sgd_step, OptimizerState};
pub(crate) use phase2::adapter_seed;
pub use phase2::{per_sample_losses, train_phase2, train_phase2_observed, Phase2Config, Phase2Epoch, Phase2Mode, Phase2Output};

/// Writes a phase-2 trace as `epoch,loss,test_acc`.
pub fn phase2_trace_csv(trace: &[Phase2Epoch]) -> String {
    let mut out = String::from("epoch,loss,test_acc\n");
    for e in trace {
        let acc = e.test_acc.map(|a| format!("{a:.6}")).unwrap_or_default();
        out.push_str(&format!("{},{:.9},{}\n", e.epoch, e.loss, acc));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{generate_synthetic, LabeledDataset, SyntheticConfig};

    fn toy_separable() -> LabeledDataset {
        LabeledDataset::new(2, 2, vec![1.0, 0.2, 0.9, -0.1, -1.0, 0.1, -0.8, -0.3], vec![0, 0, 1, 1], None).unwrap()
    }

    #[test]
    fn zero_epochs_is_chance_level() {
        let (ds, _) = generate_synthetic(&SyntheticConfig {
            n: 400,
            num_classes: 4,
            seed: 1,
            ..Default::default()
        })
        .unwrap();
        let cfg = Phase2Config {
            epochs: 0,
            mode: Phase2Mode::LinearProbe,
            ..Default::default()
        };
        let out = train_phase2(&ds, &vec![true; ds.len()], &cfg, Some(&ds)).unwrap();
        assert_eq!(out.classifier, LinearClassifier::zeros(4, ds.dim));
        assert_eq!(out.last_acc, Some(0.25));
        assert!(out.trace.is_empty());
    }

    #[test]
    fn separable_toy_reaches_full_training_accuracy() {
        let ds = toy_separable();
        for mode in [Phase2Mode::LinearProbe, Phase2Mode::PeftSurrogate, Phase2Mode::FftSurrogate] {
            let cfg = Phase2Config {
                mode,
                epochs: 200,
                rank: 1,
                ..Default::default()
            };
            let out = train_phase2(&ds, &[true; 4], &cfg, Some(&ds)).unwrap();
            assert_eq!(out.last_acc, Some(1.0), "{mode}");
        }
    }

    #[test]
    fn same_seed_same_weights() {
        let (ds, _) = generate_synthetic(&SyntheticConfig {
            n: 300,
            seed: 2,
            ..Default::default()
        })
        .unwrap();
        let mask: Vec<bool> = (0..ds.len()).map(|i| i % 3 != 0).collect();
        for mode in [Phase2Mode::LinearProbe, Phase2Mode::PeftSurrogate, Phase2Mode::FftSurrogate] {
            let cfg = Phase2Config {
                mode,
                epochs: 3,
                seed: 7,
                ..Default::default()
            };
            let a = train_phase2(&ds, &mask, &cfg, None).unwrap();
            let b = train_phase2(&ds, &mask, &cfg, None).unwrap();
            assert_eq!(a.classifier, b.classifier);
            assert_eq!(a.adapter, b.adapter);
        }
    }

    #[test]
    fn frozen_identity_transform_matches_linear_probe() {
        let (ds, _) = generate_synthetic(&SyntheticConfig {
            n: 300,
            seed: 4,
            ..Default::default()
        })
        .unwrap();
        let mask = vec![true; ds.len()];
        let lp = train_phase2(
            &ds,
            &mask,
            &Phase2Config {
                mode: Phase2Mode::LinearProbe,
                epochs: 4,
                seed: 3,
                ..Default::default()
            },
            Some(&ds),
        )
        .unwrap();
        let fft = train_phase2(
            &ds,
            &mask,
            &Phase2Config {
                mode: Phase2Mode::FftSurrogate,
                freeze_adapter: true,
                epochs: 4,
                seed: 3,
                ..Default::default()
            },
            Some(&ds),
        )
        .unwrap();
        assert_eq!(lp.classifier, fft.classifier);
        assert_eq!(lp.trace, fft.trace);
    }

    #[test]
    fn training_reads_only_masked_samples() {
        let (ds, _) = generate_synthetic(&SyntheticConfig {
            n: 200,
            seed: 5,
            ..Default::default()
        })
        .unwrap();
        let mask: Vec<bool> = (0..ds.len()).map(|i| i % 4 == 1).collect();
        let mut seen = Vec::new();
        let cfg = Phase2Config {
            epochs: 2,
            ..Default::default()
        };
        train_phase2_observed(&ds, &mask, &cfg, None, &mut |i| seen.push(i)).unwrap();
        assert_eq!(seen.len(), 2 * mask.iter().filter(|m| **m).count());
        assert!(seen.iter().all(|&i| mask[i]));
    }

    #[test]
    fn empty_mask_is_error() {
        let ds = toy_separable();
        let err = train_phase2(&ds, &[false; 4], &Phase2Config::default(), None).unwrap_err();
        assert!(matches!(err, crate::DeftError::EmptyInput(_)));
    }

    #[test]
    fn trace_csv_header() {
        let csv = phase2_trace_csv(&[Phase2Epoch {
            epoch: 1,
            loss: 0.5,
            test_acc: None,
        }]);
        assert!(csv.starts_with("epoch,loss,test_acc\n1,"));
    }
}
