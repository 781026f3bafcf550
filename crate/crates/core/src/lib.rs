//! Dual visual-semantic graph attention networks for human-object
//! interaction detection, at desk scale.
//!
//! The pipeline runs from detection fixtures to per-category average
//! precision: [`features`] computes box-pair spatial features and looks up
//! class embeddings, [`graphnet`] builds the scene graph and runs the model,
//! [`train`] fits it with Adam, and [`eval`] scores the predictions.

pub mod data;
pub mod eval;
pub mod features;
pub mod graphnet;
pub mod numerics;
pub mod train;
