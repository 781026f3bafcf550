//! Box-pair labelling, minibatching, Adam training, validation tracking,
//! checkpointing, and the finite-difference gradient check.

mod batch;
mod config;
mod fit;
mod gradcheck;

pub use batch::{label_pairs, make_batches, prepare_scene, prepare_scenes, Batch, PreparedScene};
pub use config::TrainConfig;
pub use fit::{
    batch_loss, evaluate_scenes, fit, train_epoch, EvalOutcome, FitOutcome, LogRow, TrainLog,
    BEST_CHECKPOINT, CONFIG_FILE, FINAL_CHECKPOINT, LOG_FILE,
};
pub use gradcheck::{gradcheck, GradcheckOptions, GradcheckReport, Widths, GRADCHECK_TOLERANCE};

use thiserror::Error;

use crate::data::DataError;
use crate::graphnet::GraphError;
use crate::numerics::NumericsError;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training configuration: `{field}` {message}")]
    InvalidConfig { field: &'static str, message: String },
    #[error("{source_name}:{line}: {message}")]
    ConfigParse {
        source_name: String,
        line: usize,
        message: String,
    },
    #[error("no box pairs to train on")]
    NoLabeledPairs,
    #[error("non-finite loss {value} in epoch {epoch}, batch {batch}")]
    NonFinite { epoch: usize, batch: usize, value: f64 },
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

impl TrainError {
    /// Failures caused by the numbers rather than by inputs or files.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            TrainError::NonFinite { .. } | TrainError::Numerics(_) | TrainError::Graph(GraphError::Numerics(_))
        )
    }
}
