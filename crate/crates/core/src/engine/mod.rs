//! Experiment configs, the training loop, sliding-window inference,
//! checkpoints and baseline/enhanced comparison tables.

mod checkpoint;
mod compare;
mod config;
mod infer;
mod train;

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::DataError;
use crate::metrics::MetricsError;
use crate::model::ModelError;
use crate::optim::OptimError;

pub use checkpoint::{checkpoint_config, load_checkpoint, load_into, save_checkpoint, write_atomic, CheckpointMeta};
pub use compare::{compare, Comparison, ComparisonRow};
pub use config::{DatasetConfig, ExperimentConfig, PatchSize, RunMode};
pub use infer::{evaluate_checkpoint, evaluate_model, load_cases, predict_volume, sliding_window_logits, window_starts, write_report};
pub use train::{fit, fit_with, read_curves, BestCheckpoint, CurvePoint, EpochControl, TrainState};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|v| v.name() == s)
    }
}

#[derive(Debug, Error)]
pub enum EngineError {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Optim(#[from] OptimError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("invalid experiment configuration: {0}")]
    InvalidConfig(String),
    #[error("training diverged: {consecutive} consecutive non-finite losses ending at iteration {iteration}")]
    Divergence { iteration: u64, consecutive: usize },
    #[error("{path}: corrupt checkpoint ({reason})")]
    CorruptCheckpoint { path: PathBuf, reason: String },
    #[error("configuration mismatch: {0}")]
    ConfigMismatch(String),
    #[error("dataset mismatch: {0}")]
    DatasetMismatch(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

impl EngineError {
    /// Whether the failure lies in the input data rather than the program.
    pub fn is_data_error(&self) -> bool {
        matches!(
            self,
            EngineError::Data(_) | EngineError::DatasetMismatch(_) | EngineError::CorruptCheckpoint { .. } | EngineError::Json { .. }
        )
    }
}

pub(crate) fn io_err(path: &std::path::Path) -> impl FnOnce(std::io::Error) -> EngineError {
    let path = path.to_path_buf();
    move |source| EngineError::Io { path, source }
}
