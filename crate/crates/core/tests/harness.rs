use deft::datagen::SyntheticConfig;
use deft::harness::{
    compare_strategies, render_report, run_experiment, DataConfig, ExperimentConfig, NoiseConfig, ReportFormat, RowKind, Strategy,
};
use deft::DeftError;

fn small(ratio: f64) -> ExperimentConfig {
    ExperimentConfig {
        data: DataConfig {
            preset: None,
            synthetic: Some(SyntheticConfig {
                n: 400,
                dim: 16,
                num_classes: 4,
                intra_class_noise: 0.1,
                ..SyntheticConfig::default()
            }),
            n_test: 100,
            ..DataConfig::default()
        },
        noise: NoiseConfig {
            ratio,
            ..NoiseConfig::default()
        },
        seeds: vec![0, 1],
        ..ExperimentConfig::default()
    }
}

#[test]
fn noise_free_data_is_almost_all_clean() {
    let report = run_experiment(&small(0.0)).unwrap();
    for run in &report.runs {
        assert_eq!(run.row.realized_noise, Some(0.0));
        assert!(run.row.recall.unwrap() >= 0.99, "recall {:?}", run.row.recall);
    }
}

#[test]
fn strategies_share_data_and_noise() {
    let report = compare_strategies(&small(0.4), &[Strategy::Deft, Strategy::SmallLoss, Strategy::Gmm]).unwrap();
    for seed in [0, 1] {
        let masks: Vec<_> = report
            .runs
            .iter()
            .filter(|r| r.row.seed == Some(seed))
            .map(|r| r.noisy_mask.clone().unwrap())
            .collect();
        assert_eq!(masks.len(), 3);
        assert!(masks.windows(2).all(|w| w[0] == w[1]));
        assert_eq!(masks[0].iter().filter(|m| **m).count(), 160);
    }
    // One mean, one std per strategy, and a delta for each non-baseline.
    let count = |k: RowKind| report.rows.iter().filter(|r| r.kind == k).count();
    assert_eq!(
        (
            count(RowKind::Run),
            count(RowKind::Mean),
            count(RowKind::Std),
            count(RowKind::Delta)
        ),
        (6, 3, 3, 2)
    );
    let delta = report.summary(Strategy::Deft, RowKind::Delta).unwrap();
    let d = report.summary(Strategy::Deft, RowKind::Mean).unwrap().f1.unwrap();
    let s = report.summary(Strategy::SmallLoss, RowKind::Mean).unwrap().f1.unwrap();
    assert!((delta.f1.unwrap() - (d - s)).abs() < 1e-12);
}

#[test]
fn compare_needs_two_strategies() {
    let err = compare_strategies(&small(0.2), &[Strategy::Gmm, Strategy::Gmm]).unwrap_err();
    assert!(matches!(err, DeftError::Config(_)));
}

#[test]
fn jsonl_rows_round_trip() {
    let report = run_experiment(&ExperimentConfig {
        strategy: Strategy::LabelMatch,
        ..small(0.3)
    })
    .unwrap();
    let text = render_report(&report.rows, ReportFormat::Jsonl);
    assert_eq!(text.lines().count(), report.rows.len());
    for (line, row) in text.lines().zip(&report.rows) {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        assert_eq!(v["strategy"], "label_match");
        assert_eq!(v["f1"].as_f64(), row.f1);
    }
}

#[test]
fn artifacts_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small(0.4);
    cfg.out_dir = Some(dir.path().to_path_buf());
    let report = run_experiment(&cfg).unwrap();
    for name in [
        "seed_0/noisy_labels.txt",
        "seed_1/deft/clean_mask.txt",
        "seed_1/deft/detector_trace.csv",
        "report.csv",
    ] {
        assert!(dir.path().join(name).exists(), "{name}");
    }
    assert!(!dir.path().join("INCOMPLETE").exists());
    let manifest: serde_json::Value = serde_json::from_slice(&std::fs::read(dir.path().join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["config_hash"], report.config_hash.as_str());
    assert_eq!(manifest["complete"], true);

    // Reloading the manifest reproduces the same configuration hash.
    let again = ExperimentConfig::load(&dir.path().join("manifest.json")).unwrap();
    assert_eq!(again.hash(), cfg.hash());
}

#[test]
fn failure_leaves_incomplete_marker() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.bin");
    std::fs::write(&bad, b"junk").unwrap();
    let cfg = ExperimentConfig {
        data: DataConfig {
            preset: None,
            path: Some(bad),
            ..DataConfig::default()
        },
        out_dir: Some(dir.path().join("out")),
        ..ExperimentConfig::default()
    };
    let err = run_experiment(&cfg).unwrap_err();
    assert_eq!(err.exit_code(), 3);
    assert!(err.to_string().starts_with("data stage failed"), "{err}");
    assert!(dir.path().join("out/INCOMPLETE").exists());
}
