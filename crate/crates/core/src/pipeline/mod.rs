//! Experiment orchestration: one JSON configuration drives dataset
//! generation, a grid of model trainings, evaluation, analysis, and
//! report emission. Stages are idempotent; artifacts land under a
//! run directory together with the resolved configuration.

pub mod config;
pub mod stages;

pub use config::{parse_config, AnalysisSection, DatasetSection, ExperimentConfig, ModelEntry};
pub use stages::{apply_seed_override, run_pipeline, Stage};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("missing artifact: {what} (run the `{stage}` stage first)")]
    MissingArtifact { what: String, stage: String },
    #[error("runtime failure: {0}")]
    Runtime(String),
}

impl PipelineError {
    /// CLI exit code: 1 for configuration problems, 2 for runtime ones.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) => 1,
            _ => 2,
        }
    }
}

macro_rules! runtime_from {
    ($($ty:ty),+) => {
        $(impl From<$ty> for PipelineError {
            fn from(e: $ty) -> Self {
                PipelineError::Runtime(e.to_string())
            }
        })+
    };
}

runtime_from!(
    std::io::Error,
    crate::data::DataError,
    crate::model::ModelError,
    crate::training::TrainError,
    crate::analysis::AnalysisError,
    crate::params::ParamError
);
