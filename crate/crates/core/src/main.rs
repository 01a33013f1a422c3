use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use deft::adapt::{phase2_trace_csv, train_phase2, write_checkpoint, Phase2Mode};
use deft::baselines::{mask_to_string, parse_mask};
use deft::datagen::{
    generate_synthetic, inject_instance_noise, inject_symmetric_noise, load_embeddings, write_embeddings, FileFormat, LabeledDataset,
    NoiseFamily,
};
use deft::detector::{selection_trace_csv, train_detector, DetectorConfig};
use deft::harness::{
    compare_strategies, render_report, run_experiment, selection_metrics, ExperimentConfig, ReportFormat, SelectionMetrics, Strategy,
};
use deft::kernels::Temperature;
use deft::{DeftError, Result};

/// Noisy-label detection with dual prompts and clean-subset adaptation.
#[derive(Parser)]
#[command(name = "deft", version)]
struct Cli {
    /// Experiment config (TOML, or a manifest.json from an earlier run).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output file or directory, depending on the subcommand.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_parser = parse_format)]
    format: Option<ReportFormat>,
    #[command(subcommand)]
    command: Command,
}

fn parse_format(s: &str) -> std::result::Result<ReportFormat, String> {
    s.parse().map_err(|e: DeftError| e.to_string())
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset and write it to --out.
    Gen(GenArgs),
    /// Corrupt the labels of a dataset and write it to --out.
    Noise(NoiseArgs),
    /// Train the detector; writes clean_mask.txt and detector_trace.csv to --out.
    Detect(DetectArgs),
    /// Train on a clean subset; writes model.bin and phase2_trace.csv to --out.
    Adapt(AdaptArgs),
    /// End-to-end experiment.
    Run(RunArgs),
    /// Strategy sweep on shared data and noise.
    Compare(CompareArgs),
    /// Precision / recall / F1 of a mask against ground truth.
    EvalMask(EvalArgs),
}

#[derive(Args)]
struct GenArgs {
    #[arg(long, default_value_t = 1000)]
    n: usize,
    #[arg(long, default_value_t = 64)]
    dim: usize,
    #[arg(long, default_value_t = 10)]
    classes: usize,
    #[arg(long, default_value_t = 1.2)]
    separation: f64,
    #[arg(long, default_value_t = 0.15)]
    intra_noise: f64,
    #[arg(long, default_value_t = 0.05)]
    jitter: f64,
    /// Also write the oracle text anchors (one row per class, CSV).
    #[arg(long)]
    anchors: Option<PathBuf>,
}

#[derive(Args)]
struct NoiseArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long, default_value = "symmetric")]
    family: NoiseFamily,
    #[arg(long)]
    ratio: f64,
}

#[derive(Args)]
struct DetectArgs {
    #[arg(long)]
    input: PathBuf,
    /// Detector preset: default or severe-noise.
    #[arg(long)]
    preset: Option<String>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    warmup: Option<usize>,
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    lambda_pos: Option<f64>,
    #[arg(long)]
    consistency: bool,
}

#[derive(Args)]
struct AdaptArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    test: Option<PathBuf>,
    /// Clean mask, one 0/1 per line; all samples when omitted.
    #[arg(long)]
    mask: Option<PathBuf>,
    #[arg(long)]
    mode: Option<Phase2Mode>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    strategy: Option<Strategy>,
}

#[derive(Args)]
struct CompareArgs {
    /// Comma-separated strategies.
    #[arg(long, value_delimiter = ',', default_value = "deft,label_match,small_loss,gmm")]
    strategies: Vec<Strategy>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    mask: PathBuf,
    /// Dataset carrying true labels.
    #[arg(long, conflicts_with = "truth_mask")]
    truth: Option<PathBuf>,
    /// Ground-truth clean mask, one 0/1 per line.
    #[arg(long)]
    truth_mask: Option<PathBuf>,
}

fn load(path: &Path) -> Result<LabeledDataset> {
    load_embeddings(path, FileFormat::from_path(path))
}

fn read_mask(path: &Path) -> Result<Vec<bool>> {
    parse_mask(&std::fs::read_to_string(path).map_err(|e| DeftError::Io {
        path: path.into(),
        source: e,
    })?)
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| DeftError::Io {
            path: parent.into(),
            source: e,
        })?;
    }
    std::fs::write(path, bytes).map_err(|e| DeftError::Io {
        path: path.into(),
        source: e,
    })
}

fn require_out(cli: &Cli) -> Result<&Path> {
    cli.out.as_deref().ok_or_else(|| DeftError::Config("--out is required".into()))
}

fn base_config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seeds = vec![s];
    }
    if let Some(f) = cli.format {
        cfg.format = f;
    }
    if let Some(o) = &cli.out {
        cfg.out_dir = Some(o.clone());
    }
    Ok(cfg)
}

/// Writes to stdout, treating a closed pipe as success.
fn emit(text: &str) -> Result<()> {
    use std::io::Write;
    match std::io::stdout().lock().write_all(text.as_bytes()) {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(DeftError::Io {
            path: "<stdout>".into(),
            source: e,
        }),
        _ => Ok(()),
    }
}

fn print_metrics(m: &SelectionMetrics, format: ReportFormat) -> Result<()> {
    emit(&match format {
        ReportFormat::Csv => format!(
            "precision,recall,f1,n_selected,n_true_clean\n{},{},{},{},{}\n",
            m.precision, m.recall, m.f1, m.n_selected, m.n_true_clean
        ),
        ReportFormat::Jsonl => serde_json::to_string(m).expect("metrics serialize") + "\n",
    })
}

fn execute(cli: &Cli) -> Result<()> {
    let format = cli.format.unwrap_or_default();
    let seed = cli.seed.unwrap_or(0);
    match &cli.command {
        Command::Gen(a) => {
            let mut syn = match &cli.config {
                Some(p) => ExperimentConfig::load(p)?
                    .data
                    .resolved_synthetic()?
                    .map(|(s, _)| s)
                    .ok_or_else(|| DeftError::Config("config has no synthetic data source".into()))?,
                None => deft::datagen::SyntheticConfig {
                    n: a.n,
                    dim: a.dim,
                    num_classes: a.classes,
                    class_separation: a.separation,
                    intra_class_noise: a.intra_noise,
                    text_anchor_jitter: a.jitter,
                    seed,
                },
            };
            if cli.seed.is_some() {
                syn.seed = seed;
            }
            let (ds, anchors) = generate_synthetic(&syn)?;
            let out = require_out(cli)?;
            write_embeddings(&ds, out, FileFormat::from_path(out))?;
            if let Some(p) = &a.anchors {
                let mut text = String::new();
                for e in &anchors {
                    let row: Vec<String> = e.values.iter().map(|v| format!("{v:.8e}")).collect();
                    text.push_str(&row.join(","));
                    text.push('\n');
                }
                write(p, text.as_bytes())?;
            }
        }
        Command::Noise(a) => {
            let ds = load(&a.input)?;
            let (noisy, spec) = match a.family {
                NoiseFamily::Symmetric => inject_symmetric_noise(&ds, a.ratio, seed)?,
                NoiseFamily::InstanceDependent => inject_instance_noise(&ds, a.ratio, seed)?,
            };
            let out = require_out(cli)?;
            write_embeddings(&noisy, out, FileFormat::from_path(out))?;
            emit(&(serde_json::to_string(&spec).expect("noise spec serializes") + "\n"))?;
        }
        Command::Detect(a) => {
            let mut det = match (&cli.config, &a.preset) {
                (_, Some(p)) => DetectorConfig::preset(p)?,
                (Some(c), None) => ExperimentConfig::load(c)?.detector,
                (None, None) => DetectorConfig::default(),
            };
            det.seed = seed;
            if let Some(e) = a.epochs {
                det.detect_epochs = e;
            }
            if let Some(w) = a.warmup {
                det.warmup_epochs = w;
            }
            if let Some(t) = a.tau {
                det.tau = Temperature::new(t)?;
            }
            if let Some(l) = a.lambda_pos {
                det.lambda_pos = l;
            }
            det.consistency_constraint |= a.consistency;
            let ds = load(&a.input)?;
            let out = train_detector(&ds, &det, det.initial_adapter(ds.dim)?)?;
            let dir = require_out(cli)?;
            write(&dir.join("clean_mask.txt"), mask_to_string(&out.selection.clean_mask).as_bytes())?;
            write(&dir.join("detector_trace.csv"), selection_trace_csv(&out.trace).as_bytes())?;
            if let Some(truth) = ds.true_clean_mask() {
                print_metrics(&selection_metrics(&out.selection.clean_mask, &truth)?, format)?;
            } else {
                emit(&format!("selected {} of {}\n", out.selection.n_selected(), ds.len()))?;
            }
        }
        Command::Adapt(a) => {
            let mut p2 = match &cli.config {
                Some(c) => ExperimentConfig::load(c)?.phase2,
                None => Default::default(),
            };
            p2.seed = seed;
            if let Some(m) = a.mode {
                p2.mode = m;
            }
            if let Some(e) = a.epochs {
                p2.epochs = e;
            }
            if let Some(l) = a.lr {
                p2.lr = l;
            }
            let ds = load(&a.input)?;
            let test = a.test.as_deref().map(load).transpose()?;
            let mask = match &a.mask {
                Some(p) => read_mask(p)?,
                None => vec![true; ds.len()],
            };
            let out = train_phase2(&ds, &mask, &p2, test.as_ref())?;
            let dir = require_out(cli)?;
            std::fs::create_dir_all(dir).map_err(|e| DeftError::Io {
                path: dir.into(),
                source: e,
            })?;
            write_checkpoint(&dir.join("model.bin"), &out.classifier, &out.adapter)?;
            write(&dir.join("phase2_trace.csv"), phase2_trace_csv(&out.trace).as_bytes())?;
            let fmt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
            emit(&match format {
                ReportFormat::Csv => format!("best_acc,last_acc\n{},{}\n", fmt(out.best_acc), fmt(out.last_acc)),
                ReportFormat::Jsonl => format!("{}\n", serde_json::json!({"best_acc": out.best_acc, "last_acc": out.last_acc})),
            })?;
        }
        Command::Run(a) => {
            let mut cfg = base_config(cli)?;
            if let Some(s) = a.strategy {
                cfg.strategy = s;
            }
            let report = run_experiment(&cfg)?;
            emit(&render_report(&report.rows, cfg.format))?;
        }
        Command::Compare(a) => {
            let cfg = base_config(cli)?;
            let report = compare_strategies(&cfg, &a.strategies)?;
            emit(&render_report(&report.rows, cfg.format))?;
        }
        Command::EvalMask(a) => {
            let mask = read_mask(&a.mask)?;
            let truth = match (&a.truth, &a.truth_mask) {
                (Some(p), None) => load(p)?
                    .true_clean_mask()
                    .ok_or_else(|| DeftError::DataValidation("dataset has no true labels".into()))?,
                (None, Some(p)) => read_mask(p)?,
                _ => return Err(DeftError::Config("pass exactly one of --truth and --truth-mask".into())),
            };
            print_metrics(&selection_metrics(&mask, &truth)?, format)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
