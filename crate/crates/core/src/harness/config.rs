//! Experiment configuration, loaded from TOML or from a run manifest.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::adapt::{Phase2Config, Phase2Mode};
use crate::datagen::{FileFormat, NoiseFamily, SyntheticConfig};
use crate::detector::DetectorConfig;
use crate::error::{DeftError, Result};

/// Name of the frozen synthetic benchmark preset.
pub const BENCH_STD: &str = "bench-std";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Deft,
    LabelMatch,
    SmallLoss,
    Gmm,
    /// Every sample is kept: plain training on the noisy labels.
    None,
}

impl Strategy {
    pub const ALL: [Strategy; 5] = [
        Strategy::Deft,
        Strategy::LabelMatch,
        Strategy::SmallLoss,
        Strategy::Gmm,
        Strategy::None,
    ];
}

impl std::str::FromStr for Strategy {
    type Err = DeftError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "deft" => Ok(Self::Deft),
            "label_match" | "label-match" => Ok(Self::LabelMatch),
            "small_loss" | "small-loss" => Ok(Self::SmallLoss),
            "gmm" => Ok(Self::Gmm),
            "none" | "all" => Ok(Self::None),
            other => Err(DeftError::Config(format!("unknown strategy '{other}'"))),
        }
    }
}

impl std::fmt::Display for Strategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Deft => "deft",
            Self::LabelMatch => "label_match",
            Self::SmallLoss => "small_loss",
            Self::Gmm => "gmm",
            Self::None => "none",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportFormat {
    #[default]
    Csv,
    Jsonl,
}

impl std::str::FromStr for ReportFormat {
    type Err = DeftError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(Self::Csv),
            "jsonl" => Ok(Self::Jsonl),
            other => Err(DeftError::Config(format!("unknown report format '{other}'"))),
        }
    }
}

/// Where the data comes from. Exactly one of `preset`, `synthetic` and
/// `path` must be set.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub preset: Option<String>,
    /// Synthetic training set; `n` is the training size and the seed is
    /// offset by the replicate seed.
    pub synthetic: Option<SyntheticConfig>,
    /// Extra synthetic samples generated alongside and held out for testing.
    pub n_test: usize,
    pub path: Option<PathBuf>,
    pub test_path: Option<PathBuf>,
    /// File format; inferred from the extension when absent.
    pub format: Option<FileFormat>,
}

impl DataConfig {
    pub fn bench_std() -> Self {
        Self {
            preset: Some(BENCH_STD.into()),
            ..Self::default()
        }
    }

    /// Resolves presets into an explicit synthetic configuration, or `None`
    /// for file data.
    pub fn resolved_synthetic(&self) -> Result<Option<(SyntheticConfig, usize)>> {
        match (&self.preset, &self.synthetic) {
            (Some(p), None) if p == BENCH_STD => Ok(Some((bench_std_synthetic(), 1000))),
            (Some(p), None) => Err(DeftError::Config(format!("unknown data preset '{p}'"))),
            (None, Some(s)) => Ok(Some((s.clone(), self.n_test))),
            _ => Ok(None),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let sources = [self.preset.is_some(), self.synthetic.is_some(), self.path.is_some()];
        if sources.iter().filter(|s| **s).count() != 1 {
            return Err(DeftError::Config(
                "exactly one of data.preset, data.synthetic and data.path must be set".into(),
            ));
        }
        if self.path.is_none() && self.test_path.is_some() {
            return Err(DeftError::Config("data.test_path requires data.path".into()));
        }
        if let Some((s, _)) = self.resolved_synthetic()? {
            s.validate()?;
        }
        Ok(())
    }
}

/// Synthetic part of the frozen benchmark: 5000 training samples, d = 64,
/// K = 10. Tight clusters keep the selection problem separable.
pub fn bench_std_synthetic() -> SyntheticConfig {
    SyntheticConfig {
        n: 5000,
        dim: 64,
        num_classes: 10,
        intra_class_noise: 0.1,
        seed: 0,
        ..SyntheticConfig::default()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseConfig {
    pub family: NoiseFamily,
    /// Ratio 0 keeps the labels as loaded.
    pub ratio: f64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            family: NoiseFamily::Symmetric,
            ratio: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SmallLossScope {
    #[default]
    PerBatch,
    Global,
}

/// Settings of the loss-based and label-match baselines.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineConfig {
    /// Discard ratio for small-loss; defaults to the injected noise ratio.
    pub small_loss_ratio: Option<f64>,
    pub small_loss_scope: SmallLossScope,
    pub batch_size: usize,
    pub gmm_threshold: f64,
    pub gmm_max_iters: usize,
    pub gmm_tol: f64,
    /// Linear-probe epochs on the noisy data that produce the losses.
    pub warmup_epochs: usize,
    pub warmup_lr: f64,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self {
            small_loss_ratio: None,
            small_loss_scope: SmallLossScope::PerBatch,
            batch_size: 64,
            gmm_threshold: 0.5,
            gmm_max_iters: 100,
            gmm_tol: 1e-6,
            warmup_epochs: 1,
            warmup_lr: 3e-2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub data: DataConfig,
    pub noise: NoiseConfig,
    pub strategy: Strategy,
    pub detector: DetectorConfig,
    pub phase2: Phase2Config,
    pub baseline: BaselineConfig,
    /// Keep the phase-1 adapter transform when handing the clean subset to
    /// phase 2; by default phase 2 starts from the raw embeddings.
    pub bake_adapter: bool,
    pub seeds: Vec<u64>,
    pub format: ReportFormat,
    /// Output directory; not part of the configuration hash.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            data: DataConfig::bench_std(),
            noise: NoiseConfig::default(),
            strategy: Strategy::Deft,
            detector: DetectorConfig::default(),
            phase2: Phase2Config::default(),
            baseline: BaselineConfig::default(),
            bake_adapter: false,
            seeds: vec![0],
            format: ReportFormat::Csv,
            out_dir: None,
        }
    }
}

impl ExperimentConfig {
    /// The frozen benchmark with the given symmetric noise ratio, seeds 0-4.
    pub fn bench_std(ratio: f64) -> Self {
        Self {
            noise: NoiseConfig {
                family: NoiseFamily::Symmetric,
                ratio,
            },
            seeds: (0..5).collect(),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.data.validate()?;
        if !(0.0..1.0).contains(&self.noise.ratio) {
            return Err(DeftError::Config(format!(
                "noise ratio must lie in [0, 1), got {}",
                self.noise.ratio
            )));
        }
        if self.seeds.is_empty() {
            return Err(DeftError::Config("at least one seed is required".into()));
        }
        let mut seeds = self.seeds.clone();
        seeds.sort_unstable();
        seeds.dedup();
        if seeds.len() != self.seeds.len() {
            return Err(DeftError::Config("seeds must be distinct".into()));
        }
        if self.phase2.epochs > 0 && self.phase2.batch_size == 0 {
            return Err(DeftError::Config("phase2.batch_size must be positive".into()));
        }
        match self.strategy {
            Strategy::Deft => self.detector.validate()?,
            Strategy::SmallLoss | Strategy::Gmm => {
                let b = &self.baseline;
                if b.batch_size == 0 || b.warmup_epochs == 0 || !(b.warmup_lr.is_finite() && b.warmup_lr > 0.0) {
                    return Err(DeftError::Config(
                        "baseline batch size, warm-up epochs and lr must be positive".into(),
                    ));
                }
                if let Some(r) = b.small_loss_ratio {
                    if !(0.0..1.0).contains(&r) {
                        return Err(DeftError::Config(format!("small-loss ratio must lie in [0, 1), got {r}")));
                    }
                }
                if !(0.0..1.0).contains(&b.gmm_threshold) {
                    return Err(DeftError::Config("gmm threshold must lie in [0, 1)".into()));
                }
            }
            Strategy::LabelMatch | Strategy::None => {}
        }
        Ok(())
    }

    /// Parses TOML. A `preset` key inside `[detector]` selects the base
    /// detector settings that the remaining keys override.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let mut value: toml::Table = text.parse().map_err(|e: toml::de::Error| DeftError::Config(e.to_string()))?;
        if let Some(toml::Value::Table(det)) = value.get_mut("detector") {
            if let Some(preset) = det.remove("preset") {
                let name = preset
                    .as_str()
                    .ok_or_else(|| DeftError::Config("detector.preset must be a string".into()))?;
                let base = toml::Table::try_from(DetectorConfig::preset(name)?).map_err(|e| DeftError::Config(e.to_string()))?;
                let overrides = std::mem::replace(det, base);
                det.extend(overrides);
            }
        }
        let cfg: Self = value.try_into().map_err(|e: toml::de::Error| DeftError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Loads a TOML config, or the configuration recorded in a run
    /// manifest when the file ends in `.json`.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| DeftError::io(path, e))?;
        if path.extension().is_some_and(|e| e == "json") {
            #[derive(Deserialize)]
            struct ManifestConfig {
                config: ExperimentConfig,
            }
            let m: ManifestConfig = serde_json::from_str(&text).map_err(|e| DeftError::Config(format!("{}: {e}", path.display())))?;
            m.config.validate()?;
            return Ok(m.config);
        }
        Self::from_toml_str(&text)
    }

    /// Canonical JSON of everything except the output directory.
    pub fn canonical_json(&self) -> String {
        let mut c = self.clone();
        c.out_dir = None;
        serde_json::to_string(&c).expect("config serializes")
    }

    /// SHA-256 of [`Self::canonical_json`], hex encoded.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.canonical_json().as_bytes()))
    }

    /// Phase-2 settings for one replicate.
    pub(crate) fn phase2_for(&self, seed: u64, mode: Option<Phase2Mode>) -> Phase2Config {
        Phase2Config {
            seed,
            mode: mode.unwrap_or(self.phase2.mode),
            ..self.phase2.clone()
        }
    }
}
