//! Pipeline configuration: one JSON document drives every stage, and all
//! randomness fans out from a single top-level seed by fixed derivation.

use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use flowimage::dataset::ClassLabel;
use flowimage::ingest::IngestConfig;
use flowimage::model::{BackboneKind, ModelConfig};
use flowimage::train::TrainConfig;
use flowimage::{Error, Result};

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelOverrides {
    pub base_channels: Option<usize>,
    pub blocks: Option<usize>,
    pub window_length: Option<usize>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    /// Top-level seed; per-stage seeds are derived from it.
    #[serde(default)]
    pub seed: u64,
    pub input_csv: PathBuf,
    /// All artifacts are written under this directory.
    pub workdir: PathBuf,
    #[serde(default)]
    pub ingest: IngestConfig,
    /// Backbones covered by train/evaluate/report/pipeline.
    #[serde(default = "default_backbones")]
    pub backbones: Vec<BackboneKind>,
    #[serde(default)]
    pub model: ModelOverrides,
    #[serde(default)]
    pub train: TrainConfig,
    /// Carry LSTM state across images during evaluation instead of sliding
    /// fixed windows.
    #[serde(default)]
    pub stateful_eval: bool,
}

fn default_backbones() -> Vec<BackboneKind> {
    BackboneKind::ALL.to_vec()
}

/// Per-stage seed derivation; fixed offsets keep stages decorrelated while
/// everything remains a pure function of the top-level seed.
pub fn stage_seed(base: u64, stage: Stage) -> u64 {
    match stage {
        Stage::Ingest => base.wrapping_add(0x49),
        Stage::Model(b) => base.wrapping_add(0x4d00).wrapping_add(b as u64),
        Stage::Shuffle(b) => base.wrapping_add(0x5300).wrapping_add(b as u64),
    }
}

#[derive(Clone, Copy, Debug)]
pub enum Stage {
    Ingest,
    /// Parameter initialization for backbone index `b`.
    Model(usize),
    /// Epoch shuffling for backbone index `b`.
    Shuffle(usize),
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let f = BufReader::new(File::open(path).map_err(|e| {
            Error::config(format!("cannot open config {}: {e}", path.display()))
        })?);
        let config: PipelineConfig = serde_json::from_reader(f)
            .map_err(|e| Error::config(format!("cannot parse config {}: {e}", path.display())))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(features) = &self.ingest.features {
            if features.len() != flowimage::dataset::NUM_FEATURES {
                return Err(Error::config(format!(
                    "feature list must name exactly {} columns, got {}",
                    flowimage::dataset::NUM_FEATURES,
                    features.len()
                )));
            }
        }
        if self.backbones.is_empty() {
            return Err(Error::config("at least one backbone must be configured"));
        }
        self.train.validate()?;
        Ok(())
    }

    /// The effective ingest config, with the derived stage seed applied.
    pub fn ingest_config(&self) -> IngestConfig {
        let mut cfg = self.ingest.clone();
        cfg.seed = stage_seed(self.seed, Stage::Ingest);
        cfg
    }

    /// The effective model config for one backbone.
    pub fn model_config(&self, backbone: BackboneKind) -> ModelConfig {
        let index = BackboneKind::ALL.iter().position(|&b| b == backbone).unwrap();
        let mut mc = ModelConfig::new(backbone, stage_seed(self.seed, Stage::Model(index)));
        if let Some(v) = self.model.base_channels {
            mc.base_channels = v;
        }
        if let Some(v) = self.model.blocks {
            mc.blocks = v;
        }
        if let Some(v) = self.model.window_length {
            mc.window_length = v;
        }
        mc
    }

    /// The effective train config for one backbone.
    pub fn train_config(&self, backbone: BackboneKind) -> TrainConfig {
        let index = BackboneKind::ALL.iter().position(|&b| b == backbone).unwrap();
        let mut tc = self.train.clone();
        tc.seed = stage_seed(self.seed, Stage::Shuffle(index));
        tc
    }

    // artifact paths, all rooted in the workdir

    pub fn sampled_csv(&self) -> PathBuf {
        self.workdir.join("sampled.csv")
    }

    pub fn summary_json(&self) -> PathBuf {
        self.workdir.join("summary.json")
    }

    pub fn stats_json(&self) -> PathBuf {
        self.workdir.join("stats.json")
    }

    pub fn image_store(&self, label: ClassLabel) -> PathBuf {
        self.workdir
            .join(format!("images-{}.bin", label.name().to_lowercase()))
    }

    pub fn checkpoint(&self, backbone: BackboneKind) -> PathBuf {
        self.workdir.join(format!("model-{}.ckpt", backbone.name()))
    }

    pub fn model_json(&self, backbone: BackboneKind) -> PathBuf {
        self.workdir.join(format!("model-{}.json", backbone.name()))
    }

    pub fn train_report(&self, backbone: BackboneKind) -> PathBuf {
        self.workdir.join(format!("train-{}.json", backbone.name()))
    }

    pub fn metrics_json(&self, backbone: BackboneKind) -> PathBuf {
        self.workdir
            .join(format!("metrics-{}.json", backbone.name()))
    }

    pub fn confusion_csv(&self, backbone: BackboneKind) -> PathBuf {
        self.workdir
            .join(format!("confusion-{}.csv", backbone.name()))
    }

    pub fn comparison_csv(&self) -> PathBuf {
        self.workdir.join("comparison.csv")
    }
}
