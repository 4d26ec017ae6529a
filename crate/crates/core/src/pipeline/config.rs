//! Experiment configuration: strict JSON parsing with defaults filled
//! from the per-module conventions, unknown keys rejected, and every
//! error carrying a path into the document.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::PipelineError;
use crate::data::generate::DatasetConfig;
use crate::model::{EmbeddingKind, FusionKind, ScalePreset};
use crate::training::{OptimizerConfig, TrainConfig};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetSection,
    pub models: Vec<ModelEntry>,
    #[serde(default)]
    pub training: TrainingSection,
    #[serde(default)]
    pub analysis: AnalysisSection,
    /// Default output directory; `--out` overrides it.
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSection {
    /// Generate a synthetic planted-cue dataset.
    #[serde(default)]
    pub synthetic: Option<DatasetConfig>,
    /// Or point at an existing dataset directory (annotations plus
    /// feature tracks in the documented formats).
    #[serde(default)]
    pub real_dir: Option<PathBuf>,
    #[serde(default = "default_train_fraction")]
    pub train_fraction: f64,
    #[serde(default)]
    pub split_seed: u64,
}

fn default_train_fraction() -> f64 {
    0.7
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelEntry {
    pub id: String,
    /// Stream letters, e.g. "S", "SI", "SVIR".
    pub streams: String,
    #[serde(default = "default_embedding")]
    pub embedding: EmbeddingKind,
    #[serde(default = "default_scale")]
    pub scale: ScalePreset,
    #[serde(default)]
    pub fusion: Option<FusionKind>,
    #[serde(default)]
    pub rubi: bool,
    #[serde(default = "default_model_seed")]
    pub seed: u64,
}

fn default_embedding() -> EmbeddingKind {
    EmbeddingKind::Static
}

fn default_scale() -> ScalePreset {
    ScalePreset::Desk
}

fn default_model_seed() -> u64 {
    7
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingSection {
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IemPair {
    pub name: String,
    pub group_a: Vec<String>,
    pub group_b: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalysisSection {
    pub iem_pairs: Vec<IemPair>,
    pub popular_vote_threshold: f64,
    /// Whether popular-vote membership also requires correctness.
    pub popular_vote_require_correct: bool,
    /// Runs entering the popular vote; empty means all.
    pub popular_vote_runs: Vec<String>,
    /// Optional accuracy comparison groups for the significance test.
    pub ttest_group_a: Vec<String>,
    pub ttest_group_b: Vec<String>,
}

impl Default for AnalysisSection {
    fn default() -> Self {
        AnalysisSection {
            iem_pairs: Vec::new(),
            popular_vote_threshold: 0.5,
            popular_vote_require_correct: true,
            popular_vote_runs: Vec::new(),
            ttest_group_a: Vec::new(),
            ttest_group_b: Vec::new(),
        }
    }
}

/// Strict parse: unknown keys, type mismatches and dangling run ids are
/// errors, each locating the offending path in the document.
pub fn parse_config(path: &Path) -> Result<ExperimentConfig, PipelineError> {
    let text = fs::read_to_string(path)
        .map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
    let de = &mut serde_json::Deserializer::from_str(&text);
    let cfg: ExperimentConfig = serde_path_to_error::deserialize(de).map_err(|e| {
        PipelineError::Config(format!(
            "{}: at `{}`: {}",
            path.display(),
            e.path(),
            e.inner()
        ))
    })?;
    validate(&cfg)?;
    Ok(cfg)
}

pub fn validate(cfg: &ExperimentConfig) -> Result<(), PipelineError> {
    match (&cfg.dataset.synthetic, &cfg.dataset.real_dir) {
        (None, None) => {
            return Err(PipelineError::Config(
                "dataset: one of `synthetic` or `real_dir` is required".into(),
            ))
        }
        (Some(_), Some(_)) => {
            return Err(PipelineError::Config(
                "dataset: `synthetic` and `real_dir` are mutually exclusive".into(),
            ))
        }
        _ => {}
    }
    if let Some(s) = &cfg.dataset.synthetic {
        s.validate()
            .map_err(|e| PipelineError::Config(format!("dataset.synthetic: {e}")))?;
    }
    if !(0.05..=0.95).contains(&cfg.dataset.train_fraction) {
        return Err(PipelineError::Config(format!(
            "dataset.train_fraction {} outside [0.05, 0.95]",
            cfg.dataset.train_fraction
        )));
    }
    if cfg.models.is_empty() {
        return Err(PipelineError::Config("models: at least one entry".into()));
    }
    let mut ids = BTreeSet::new();
    for m in &cfg.models {
        if !ids.insert(m.id.as_str()) {
            return Err(PipelineError::Config(format!(
                "models: duplicate id `{}`",
                m.id
            )));
        }
        crate::model::StreamSet::parse(&m.streams)
            .map_err(|e| PipelineError::Config(format!("models.{}: {e}", m.id)))?;
        if m.fusion.is_some() {
            let set = crate::model::StreamSet::parse(&m.streams).unwrap();
            if !(set.subtitle && set.img) {
                return Err(PipelineError::Config(format!(
                    "models.{}: fusion needs streams S and I",
                    m.id
                )));
            }
        }
    }
    cfg.training
        .train
        .validate()
        .map_err(|e| PipelineError::Config(format!("training.train: {e}")))?;
    cfg.training
        .optimizer
        .validate()
        .map_err(|e| PipelineError::Config(format!("training.optimizer: {e}")))?;
    let a = &cfg.analysis;
    if !(0.5..=1.0).contains(&a.popular_vote_threshold) {
        return Err(PipelineError::Config(format!(
            "analysis.popular_vote_threshold {} outside [0.5, 1]",
            a.popular_vote_threshold
        )));
    }
    let check_ids = |label: &str, list: &[String]| -> Result<(), PipelineError> {
        for id in list {
            if !ids.contains(id.as_str()) {
                return Err(PipelineError::Config(format!(
                    "analysis.{label}: run id `{id}` is not declared in `models`"
                )));
            }
        }
        Ok(())
    };
    for pair in &a.iem_pairs {
        check_ids(&format!("iem_pairs.{}.group_a", pair.name), &pair.group_a)?;
        check_ids(&format!("iem_pairs.{}.group_b", pair.name), &pair.group_b)?;
        if pair.group_a.is_empty() {
            return Err(PipelineError::Config(format!(
                "analysis.iem_pairs.{}: group_a must be non-empty",
                pair.name
            )));
        }
    }
    check_ids("popular_vote_runs", &a.popular_vote_runs)?;
    check_ids("ttest_group_a", &a.ttest_group_a)?;
    check_ids("ttest_group_b", &a.ttest_group_b)?;
    Ok(())
}
