//! The dual-graph HOI model: graph construction, visual and semantic
//! attention streams, fusion, box-pair readout, ablation variants, and
//! checkpoints.

mod checkpoint;
mod config;
mod graph;
pub mod layers;
mod model;
mod params;

pub use checkpoint::{load_checkpoint, load_checkpoint_for, save_checkpoint, CHECKPOINT_MAGIC};
pub use config::{DropoutScope, ModelConfig, Variant};
pub use graph::{build_graph, GraphEdge, GraphNode, SceneGraph, Topology};
pub use layers::DropoutCtx;
pub use model::{
    candidate_pairs, forward, forward_graph, ForwardPass, HoiPrediction, UpdatedGraph,
};
pub use params::{LayerRef, ModelParams};

use thiserror::Error;

use crate::features::FeatureError;
use crate::numerics::NumericsError;

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("scene `{image_id}` has {nodes} usable detection(s); at least 2 are needed")]
    SceneTooSmall { image_id: String, nodes: usize },
    #[error("detection {node} has a {found}-wide visual feature, expected {expected}")]
    FeatureWidth {
        node: usize,
        expected: usize,
        found: usize,
    },
    #[error("parameter layout mismatch: {0}")]
    LayoutMismatch(String),
    #[error("{path}: corrupt checkpoint: {message}")]
    CorruptCheckpoint { path: String, message: String },
    #[error("{path}: checkpoint does not match the configuration: {message}")]
    CheckpointMismatch { path: String, message: String },
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}
