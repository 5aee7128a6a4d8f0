//! TOML experiment configuration.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{CorruptionKind, CsvSchema, TaskSpec};
use crate::error::{Error, Result};
use crate::models::ModelSpec;
use crate::training::{Method, TrainConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Pretrain,
    Finetune,
    Eval,
    Ood,
    ShiftSweep,
    MembersAblation,
    BackboneQuality,
    Diversity,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::Pretrain => "pretrain",
            ExperimentKind::Finetune => "finetune",
            ExperimentKind::Eval => "eval",
            ExperimentKind::Ood => "ood",
            ExperimentKind::ShiftSweep => "shift_sweep",
            ExperimentKind::MembersAblation => "members_ablation",
            ExperimentKind::BackboneQuality => "backbone_quality",
            ExperimentKind::Diversity => "diversity",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CsvSource {
    pub train: PathBuf,
    pub test: PathBuf,
    pub schema: CsvSchema,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IdxSource {
    pub train_images: PathBuf,
    pub train_labels: PathBuf,
    pub test_images: PathBuf,
    pub test_labels: PathBuf,
    pub n_classes: usize,
}

/// Where the target task comes from: exactly one of `task`, `csv`, `idx`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub task: Option<TaskSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub csv: Option<CsvSource>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub idx: Option<IdxSource>,
    #[serde(default = "default_per_class")]
    pub n_train_per_class: usize,
    #[serde(default = "default_per_class")]
    pub n_test_per_class: usize,
}

fn default_per_class() -> usize {
    250
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PretrainConfig {
    /// Fraction of target classes whose structure the source task shares.
    #[serde(default = "default_overlap")]
    pub overlap: f64,
    #[serde(default = "default_per_class")]
    pub n_per_class: usize,
    pub train: TrainConfig,
}

fn default_overlap() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OodConfig {
    /// Offset added to the OOD task's prototypes.
    #[serde(default)]
    pub shift: f64,
    #[serde(default = "default_per_class")]
    pub n_per_class: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShiftConfig {
    #[serde(default = "all_kinds")]
    pub kinds: Vec<CorruptionKind>,
}

fn all_kinds() -> Vec<CorruptionKind> {
    CorruptionKind::ALL.to_vec()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AblationConfig {
    #[serde(default = "default_members")]
    pub members: Vec<usize>,
}

fn default_members() -> Vec<usize> {
    vec![1, 2, 4, 8]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QualityConfig {
    /// Pretraining epochs of the weak arm; the strong arm uses `pretrain.train.epochs`.
    pub weak_epochs: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weak_overlap: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiversityConfig {
    #[serde(default = "default_top_k")]
    pub top_k: usize,
}

fn default_top_k() -> usize {
    8
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    pub seeds: Vec<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    /// Methods compared by finetune, ood and shift_sweep.
    #[serde(default = "default_methods")]
    pub methods: Vec<Method>,
    /// Dropout rate of the MC-dropout baseline.
    #[serde(default = "default_dropout")]
    pub mc_dropout_rate: f64,
    /// Checkpoint read by eval and diversity, or a pretrained base for finetune.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<PathBuf>,
    pub model: ModelSpec,
    /// Training of the SVE and SVF models.
    pub train: TrainConfig,
    /// Training of the full-model baselines; defaults to `train`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub baseline_train: Option<TrainConfig>,
    pub data: DataConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pretrain: Option<PretrainConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ood: Option<OodConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shift: Option<ShiftConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ablation: Option<AblationConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub quality: Option<QualityConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diversity: Option<DiversityConfig>,
}

fn default_methods() -> Vec<Method> {
    vec![Method::Single, Method::Sve, Method::DeepEnsemble]
}

fn default_dropout() -> f64 {
    0.05
}

fn config_err(path: &str, msg: impl Into<String>) -> Error {
    Error::Config {
        path: path.to_string(),
        msg: msg.into(),
    }
}

impl ExperimentConfig {
    /// Parses TOML text; schema violations name the offending field path.
    pub fn from_toml(text: &str) -> Result<Self> {
        let de = toml::Deserializer::new(text);
        let cfg: ExperimentConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            config_err(&path, e.into_inner().message().trim().to_string())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(config_err("seeds", "at least one seed is required"));
        }
        self.model.validate().map_err(|e| config_err("model", e.to_string()))?;
        self.train.validate().map_err(|e| config_err("train", e.to_string()))?;
        if let Some(b) = &self.baseline_train {
            b.validate().map_err(|e| config_err("baseline_train", e.to_string()))?;
        }
        let sources = [self.data.task.is_some(), self.data.csv.is_some(), self.data.idx.is_some()];
        if sources.iter().filter(|&&s| s).count() != 1 {
            return Err(config_err("data", "exactly one of data.task, data.csv, data.idx is required"));
        }
        if let Some(t) = &self.data.task {
            t.validate().map_err(|e| config_err("data.task", e.to_string()))?;
            if t.n_classes != self.model.n_classes {
                return Err(config_err("data.task.n_classes", "must equal model.n_classes"));
            }
            if t.input_dim != self.model.input_dim() {
                return Err(config_err("data.task.input_dim", "must equal the model input width"));
            }
        }
        if let Some(p) = &self.pretrain {
            if !(0.0..=1.0).contains(&p.overlap) {
                return Err(config_err("pretrain.overlap", "must lie in [0, 1]"));
            }
            p.train.validate().map_err(|e| config_err("pretrain.train", e.to_string()))?;
        }
        if !(0.0..1.0).contains(&self.mc_dropout_rate) {
            return Err(config_err("mc_dropout_rate", "must lie in [0, 1)"));
        }
        let need_task = matches!(self.experiment, ExperimentKind::Ood | ExperimentKind::BackboneQuality);
        if need_task && self.data.task.is_none() {
            return Err(config_err("data.task", format!("{} needs a synthetic task", self.experiment.name())));
        }
        match self.experiment {
            ExperimentKind::Pretrain if self.pretrain.is_none() => Err(config_err("pretrain", "pretrain needs a [pretrain] section")),
            ExperimentKind::Eval if self.checkpoint.is_none() => Err(config_err("checkpoint", "eval needs a checkpoint path")),
            ExperimentKind::BackboneQuality if self.pretrain.is_none() || self.quality.is_none() => {
                Err(config_err("quality", "backbone_quality needs [pretrain] and [quality] sections"))
            }
            ExperimentKind::MembersAblation if self.ablation.as_ref().is_some_and(|a| a.members.contains(&0)) => {
                Err(config_err("ablation.members", "ensemble sizes must be at least 1"))
            }
            _ => Ok(()),
        }
    }

    /// Settings for the full-model baselines.
    pub fn baseline_train(&self) -> &TrainConfig {
        self.baseline_train.as_ref().unwrap_or(&self.train)
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        super::checkpoint::hex(&Sha256::digest(serde_json::to_vec(self).expect("config serializes")))
    }
}
