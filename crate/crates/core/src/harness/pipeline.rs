//! End-to-end runs: data, noise, selection, metrics, phase-2 adaptation and
//! on-disk artifacts.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use serde::Serialize;

use super::config::{ExperimentConfig, SmallLossScope, Strategy};
use super::metrics::selection_metrics;
use super::report::{aggregate, render_report, ReportRow, RowKind};
use crate::adapt::{encode_checkpoint, per_sample_losses, phase2_trace_csv, train_phase2, AdapterParams, Phase2Config, Phase2Mode};
use crate::baselines::{
    contiguous_batches, fit_gmm_em, mask_to_string, select_gmm, select_label_match, select_small_loss, select_small_loss_global,
};
use crate::datagen::{
    generate_synthetic, inject_instance_noise, inject_symmetric_noise, load_embeddings, FileFormat, LabeledDataset, NoiseFamily, NoiseSpec,
};
use crate::detector::{dataset_features, selection_trace_csv, train_detector, EpochRecord, PromptPair};
use crate::error::{DeftError, Result};
use crate::kernels::{substream, Matrix};

/// One replicate's data after noise injection.
#[derive(Debug, Clone)]
pub struct PreparedData {
    pub seed: u64,
    pub train: LabeledDataset,
    pub test: Option<LabeledDataset>,
    /// Oracle class anchors, known for synthetic data only.
    pub anchors: Option<Matrix>,
    pub noise: Option<NoiseSpec>,
}

/// Loads or generates the data for `seed` and injects the configured noise.
/// Every strategy run on the same seed sees this exact realization.
pub fn prepare_data(config: &ExperimentConfig, seed: u64) -> Result<PreparedData> {
    let (train, test, anchors) = match config.data.resolved_synthetic().map_err(|e| e.in_stage("data"))? {
        Some((mut syn, n_test)) => {
            let n_train = syn.n;
            syn.n = n_train + n_test;
            syn.seed = syn.seed.wrapping_add(seed);
            let (all, anchors) = generate_synthetic(&syn).map_err(|e| e.in_stage("data"))?;
            let (train, test) = all.split_at(n_train);
            let rows: Vec<Vec<f64>> = anchors.iter().map(|a| a.to_f64()).collect();
            let anchors = Matrix::from_rows(&rows).map_err(|e| e.in_stage("data"))?;
            (train, (n_test > 0).then_some(test), Some(anchors))
        }
        None => {
            let path = config
                .data
                .path
                .as_ref()
                .ok_or_else(|| DeftError::Config("no data source".into()))?;
            let load = |p: &Path| load_embeddings(p, config.data.format.unwrap_or_else(|| FileFormat::from_path(p)));
            let train = load(path).map_err(|e| e.in_stage("data"))?;
            let test = config
                .data
                .test_path
                .as_deref()
                .map(load)
                .transpose()
                .map_err(|e| e.in_stage("data"))?;
            if let Some(t) = &test {
                if t.dim != train.dim || t.num_classes > train.num_classes {
                    return Err(DeftError::DataValidation("test set does not match the training set's shape".into()).in_stage("data"));
                }
            }
            (train, test, None)
        }
    };

    let (train, noise) = if config.noise.ratio > 0.0 {
        let (noisy, spec) = match config.noise.family {
            NoiseFamily::Symmetric => inject_symmetric_noise(&train, config.noise.ratio, seed),
            NoiseFamily::InstanceDependent => inject_instance_noise(&train, config.noise.ratio, seed),
        }
        .map_err(|e| e.in_stage("noise"))?;
        (noisy, Some(spec))
    } else {
        (train, None)
    };
    Ok(PreparedData {
        seed,
        train,
        test,
        anchors,
        noise,
    })
}

/// A strategy's clean mask plus what the detector produced, if it ran.
#[derive(Debug, Clone)]
pub struct Selection {
    pub clean_mask: Vec<bool>,
    pub detector_trace: Option<Vec<EpochRecord>>,
    pub adapter: Option<AdapterParams>,
}

/// Per-sample losses of a linear probe trained on all noisy labels.
pub fn warmup_losses(data: &PreparedData, config: &ExperimentConfig) -> Result<Vec<f64>> {
    let b = &config.baseline;
    let probe = Phase2Config {
        mode: Phase2Mode::LinearProbe,
        epochs: b.warmup_epochs,
        lr: b.warmup_lr,
        batch_size: b.batch_size,
        seed: data.seed,
        ..config.phase2.clone()
    };
    let out = train_phase2(&data.train, &vec![true; data.train.len()], &probe, None)?;
    per_sample_losses(&out.classifier, &out.adapter, &data.train)
}

pub fn select(data: &PreparedData, config: &ExperimentConfig, strategy: Strategy) -> Result<Selection> {
    let ds = &data.train;
    let mut out = Selection {
        clean_mask: vec![true; ds.len()],
        detector_trace: None,
        adapter: None,
    };
    match strategy {
        Strategy::None => {}
        Strategy::Deft => {
            let det = crate::detector::DetectorConfig {
                seed: data.seed,
                ..config.detector.clone()
            };
            let result = train_detector(ds, &det, det.initial_adapter(ds.dim)?)?;
            out.clean_mask = result.selection.clean_mask;
            out.detector_trace = Some(result.trace);
            out.adapter = Some(result.adapter);
        }
        Strategy::LabelMatch => {
            let anchors = match &data.anchors {
                Some(a) => a.clone(),
                None => PromptPair::init_from_dataset(ds, data.seed)?.positive,
            };
            out.clean_mask = select_label_match(&dataset_features(ds), &ds.given_labels, &anchors, config.detector.tau)?;
        }
        Strategy::SmallLoss => {
            let losses = warmup_losses(data, config)?;
            let r = config.baseline.small_loss_ratio.unwrap_or(config.noise.ratio);
            out.clean_mask = match config.baseline.small_loss_scope {
                SmallLossScope::Global => select_small_loss_global(&losses, r)?,
                SmallLossScope::PerBatch => {
                    let mut order: Vec<usize> = (0..ds.len()).collect();
                    order.shuffle(&mut substream(data.seed, 3));
                    let batches: Vec<Vec<usize>> = contiguous_batches(ds.len(), config.baseline.batch_size)
                        .into_iter()
                        .map(|b| b.into_iter().map(|i| order[i]).collect())
                        .collect();
                    select_small_loss(&losses, r, &batches)?
                }
            };
        }
        Strategy::Gmm => {
            let losses = warmup_losses(data, config)?;
            let model = fit_gmm_em(&losses, config.baseline.gmm_max_iters, config.baseline.gmm_tol)?;
            out.clean_mask = select_gmm(&losses, &model, config.baseline.gmm_threshold);
        }
    }
    Ok(out)
}

/// Runs every embedding through the adapter.
fn bake(ds: &LabeledDataset, adapter: &AdapterParams) -> Result<LabeledDataset> {
    let mut out = ds.clone();
    for i in 0..ds.len() {
        let y = adapter.forward(&ds.embedding_f64(i))?;
        for (dst, v) in out.embeddings[i * ds.dim..(i + 1) * ds.dim].iter_mut().zip(y) {
            *dst = v as f32;
        }
    }
    out.normalized = crate::datagen::rows_are_unit(&out.embeddings, out.dim);
    Ok(out)
}

/// Everything a single (seed, strategy) run produced.
#[derive(Debug, Clone)]
pub struct RunRecord {
    pub row: ReportRow,
    pub clean_mask: Vec<bool>,
    /// `true` where the given label was corrupted, when truth is known.
    pub noisy_mask: Option<Vec<bool>>,
}

#[derive(Debug, Clone)]
pub struct ExperimentReport {
    pub config_hash: String,
    /// Run rows followed by aggregate (and delta) rows.
    pub rows: Vec<ReportRow>,
    pub runs: Vec<RunRecord>,
}

impl ExperimentReport {
    /// Aggregate row of the given kind for `strategy`.
    pub fn summary(&self, strategy: Strategy, kind: RowKind) -> Option<&ReportRow> {
        self.rows.iter().find(|r| r.strategy == strategy && r.kind == kind)
    }
}

struct Artifacts {
    root: Option<PathBuf>,
    written: BTreeSet<String>,
}

impl Artifacts {
    fn write(&mut self, rel: &str, bytes: &[u8]) -> Result<()> {
        let Some(root) = &self.root else { return Ok(()) };
        let path = root.join(rel);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| DeftError::io(parent, e))?;
        }
        std::fs::write(&path, bytes).map_err(|e| DeftError::io(&path, e))?;
        self.written.insert(rel.to_string());
        Ok(())
    }
}

fn run_one(
    data: &PreparedData,
    config: &ExperimentConfig,
    strategy: Strategy,
    phase2_mode: Option<Phase2Mode>,
    art: &mut Artifacts,
) -> Result<RunRecord> {
    let seed = data.seed;
    let dir = format!("seed_{seed}/{strategy}");
    let sel = select(data, config, strategy).map_err(|e| e.in_stage("selection"))?;
    art.write(&format!("{dir}/clean_mask.txt"), mask_to_string(&sel.clean_mask).as_bytes())?;
    if let Some(trace) = &sel.detector_trace {
        art.write(&format!("{dir}/detector_trace.csv"), selection_trace_csv(trace).as_bytes())?;
    }

    let truth = data.train.true_clean_mask();
    let metrics = truth
        .as_ref()
        .map(|t| selection_metrics(&sel.clean_mask, t))
        .transpose()
        .map_err(|e| e.in_stage("metrics"))?;

    let (train, test) = match (&sel.adapter, config.bake_adapter) {
        (Some(a), true) => (
            bake(&data.train, a).map_err(|e| e.in_stage("phase2"))?,
            data.test
                .as_ref()
                .map(|t| bake(t, a))
                .transpose()
                .map_err(|e| e.in_stage("phase2"))?,
        ),
        _ => (data.train.clone(), data.test.clone()),
    };
    let p2 =
        train_phase2(&train, &sel.clean_mask, &config.phase2_for(seed, phase2_mode), test.as_ref()).map_err(|e| e.in_stage("phase2"))?;
    art.write(&format!("{dir}/phase2_trace.csv"), phase2_trace_csv(&p2.trace).as_bytes())?;
    art.write(&format!("{dir}/model.bin"), &encode_checkpoint(&p2.classifier, &p2.adapter))?;

    Ok(RunRecord {
        row: ReportRow {
            kind: RowKind::Run,
            strategy,
            seed: Some(seed),
            realized_noise: data.train.noise_ratio(),
            n_selected: sel.clean_mask.iter().filter(|m| **m).count() as f64,
            precision: metrics.map(|m| m.precision),
            recall: metrics.map(|m| m.recall),
            f1: metrics.map(|m| m.f1),
            best_acc: p2.best_acc,
            last_acc: p2.last_acc,
        },
        clean_mask: sel.clean_mask,
        noisy_mask: truth.map(|t| t.iter().map(|c| !c).collect()),
    })
}

#[derive(Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    version: &'static str,
    config_hash: &'a str,
    seeds: &'a [u64],
    strategies: Vec<String>,
    complete: bool,
    artifacts: Vec<&'a str>,
    config: &'a ExperimentConfig,
}

fn execute(
    config: &ExperimentConfig,
    strategies: &[Strategy],
    with_delta: bool,
    phase2_mode: Option<Phase2Mode>,
) -> Result<ExperimentReport> {
    config.validate()?;
    for &s in strategies {
        ExperimentConfig {
            strategy: s,
            ..config.clone()
        }
        .validate()?;
    }
    let mut art = Artifacts {
        root: config.out_dir.clone(),
        written: BTreeSet::new(),
    };
    if let Some(root) = &art.root {
        std::fs::create_dir_all(root).map_err(|e| DeftError::io(root, e))?;
        let _ = std::fs::remove_file(root.join("INCOMPLETE"));
    }
    let hash = config.hash();
    let result = (|| {
        let mut runs = Vec::new();
        for &seed in &config.seeds {
            let data = prepare_data(config, seed)?;
            if let Some(noisy) = data.train.true_clean_mask() {
                let flipped: Vec<bool> = noisy.iter().map(|c| !c).collect();
                art.write(&format!("seed_{seed}/noisy_labels.txt"), mask_to_string(&flipped).as_bytes())?;
            }
            for &s in strategies {
                runs.push(run_one(&data, config, s, phase2_mode, &mut art)?);
            }
        }
        let run_rows: Vec<ReportRow> = runs.iter().map(|r| r.row.clone()).collect();
        let rows = aggregate(&run_rows, with_delta);
        let ext = match config.format {
            super::config::ReportFormat::Csv => "csv",
            super::config::ReportFormat::Jsonl => "jsonl",
        };
        art.write(&format!("report.{ext}"), render_report(&rows, config.format).as_bytes())?;
        Ok(ExperimentReport {
            config_hash: hash.clone(),
            rows,
            runs,
        })
    })();

    if art.root.is_some() {
        let mut recorded = config.clone();
        recorded.out_dir = None;
        if strategies.len() == 1 {
            recorded.strategy = strategies[0];
        }
        let written: Vec<String> = art.written.iter().cloned().collect();
        let manifest = Manifest {
            tool: "deft",
            version: env!("CARGO_PKG_VERSION"),
            config_hash: &hash,
            seeds: &config.seeds,
            strategies: strategies.iter().map(|s| s.to_string()).collect(),
            complete: result.is_ok(),
            artifacts: written.iter().map(String::as_str).collect(),
            config: &recorded,
        };
        let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes") + "\n";
        art.write("manifest.json", text.as_bytes())?;
        if let Err(e) = &result {
            art.write("INCOMPLETE", format!("{e}\n").as_bytes())?;
        }
    }
    result
}

/// Runs `config.strategy` for every seed and writes the report, masks,
/// traces, checkpoints and `manifest.json` under `config.out_dir` when set.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentReport> {
    execute(config, &[config.strategy], false, None)
}

/// Like [`run_experiment`] but with an explicit phase-2 mode, which is how
/// the adaptation variants are compared on one selection.
pub fn run_experiment_with_phase2(config: &ExperimentConfig, mode: Phase2Mode) -> Result<ExperimentReport> {
    execute(config, &[config.strategy], false, Some(mode))
}

/// Runs several strategies on shared data and noise realizations and
/// appends delta rows against small-loss.
pub fn compare_strategies(config: &ExperimentConfig, strategies: &[Strategy]) -> Result<ExperimentReport> {
    let mut unique = strategies.to_vec();
    unique.dedup();
    if unique.len() < 2 || unique.iter().collect::<BTreeSet<_>>().len() != unique.len() {
        return Err(DeftError::Config("compare needs at least two distinct strategies".into()));
    }
    execute(config, &unique, true, None)
}
