//! Config-driven experiments: data preparation, training, evaluation,
//! gradient checks, benchmarks and the ranking simulation.

pub mod commands;
mod config;
mod runner;

pub use config::{
    BenchConfig, DataConfig, EvaluationConfig, ExperimentConfig, FusionConfig, GradCheckConfig, TrainingConfig,
};
pub use runner::{
    evaluate_predictions, feature_schema, run_training,
    build_model, evaluate, predict_all, prepare_data, train, EpochRecord, EvalResult, PreparedData, Split,
    StreamSeeds,
};

use std::path::{Path, PathBuf};

use crate::data::DataError;
use crate::fusion::FusionError;
use crate::metrics::MetricsError;
use crate::model::ModelError;
use crate::nn::{GradCheckReport, NnError};
use crate::synth::SynthError;

#[derive(Debug, thiserror::Error)]
pub enum ExperimentError {
    #[error("config: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("epoch {epoch}, batch {batch}: non-finite loss {value}")]
    NonFiniteLoss { epoch: usize, batch: usize, value: f64 },
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Fusion(#[from] FusionError),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("gradient check failed: max relative error {:.3e} at {}[{}]", .0.max_rel_error, .0.worst_param, .0.worst_index)]
    GradCheck(GradCheckReport),
    #[error("{0}")]
    Mode(String),
}

impl ExperimentError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        ExperimentError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    /// Process exit code: 2 config, 3 I/O and input data, 4 numeric,
    /// 5 checkpoint, 6 gradient check, 7 mode misuse.
    pub fn exit_code(&self) -> i32 {
        match self {
            ExperimentError::Config(_) => 2,
            ExperimentError::Io { .. } | ExperimentError::Data(_) => 3,
            ExperimentError::Synth(SynthError::Config(_)) => 2,
            ExperimentError::Synth(_) => 3,
            ExperimentError::Model(ModelError::Config(_)) => 2,
            ExperimentError::Model(ModelError::OutOfVocabulary { .. }) => 3,
            ExperimentError::Model(ModelError::Nn(NnError::Checkpoint(_))) => 5,
            ExperimentError::Model(_) => 4,
            ExperimentError::NonFiniteLoss { .. } | ExperimentError::Metrics(_) => 4,
            ExperimentError::Fusion(FusionError::NoLatent) => 7,
            ExperimentError::Fusion(_) => 2,
            ExperimentError::Checkpoint(_) => 5,
            ExperimentError::GradCheck(_) => 6,
            ExperimentError::Mode(_) => 7,
        }
    }
}
