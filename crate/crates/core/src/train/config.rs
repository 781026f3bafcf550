use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::TrainError;
use crate::graphnet::{DropoutScope, ModelConfig, Variant};

fn d_hidden() -> usize {
    64
}
fn d_batch() -> usize {
    32
}
fn d_dropout() -> f64 {
    0.3
}
fn d_lr() -> f64 {
    1e-5
}
fn d_epochs() -> usize {
    200
}
fn d_eval_every() -> usize {
    10
}
fn d_iou() -> f64 {
    0.5
}
fn yes() -> bool {
    true
}

/// Training run settings, read from and written to JSON. Widths default to
/// the desk-scale 64; feature widths and the action count are taken from
/// the dataset unless pinned here.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default = "default_variant")]
    pub variant: Variant,
    #[serde(default = "d_hidden")]
    pub hidden: usize,
    #[serde(default = "d_hidden")]
    pub readout_hidden: usize,
    #[serde(default = "d_batch")]
    pub batch_size: usize,
    #[serde(default = "d_dropout")]
    pub dropout: f64,
    #[serde(default = "d_lr")]
    pub lr: f64,
    #[serde(default = "d_epochs")]
    pub epochs: usize,
    #[serde(default)]
    pub seed: u64,
    /// Validate every this many epochs (and after the last one).
    #[serde(default = "d_eval_every")]
    pub eval_every: usize,
    #[serde(default = "yes")]
    pub attn_leaky: bool,
    #[serde(default)]
    pub dropout_scope: DropoutScope,
    #[serde(default)]
    pub human_objects: bool,
    /// IoU cutoff used both to label training pairs and to score validation.
    #[serde(default = "d_iou")]
    pub iou_threshold: f64,
    #[serde(default)]
    pub visual_dim: Option<usize>,
    #[serde(default)]
    pub word_dim: Option<usize>,
    #[serde(default)]
    pub n_actions: Option<usize>,
    #[serde(default)]
    pub data: Option<PathBuf>,
    #[serde(default)]
    pub out: Option<PathBuf>,
}

fn default_variant() -> Variant {
    Variant::Full
}

impl Default for TrainConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("all fields have defaults")
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |field: &'static str, message: String| Err(TrainError::InvalidConfig { field, message });
        if self.batch_size == 0 {
            return bad("batch_size", "must be at least 1".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout", format!("{} outside [0, 1)", self.dropout));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return bad("lr", format!("{} is not a non-negative finite number", self.lr));
        }
        if self.hidden == 0 || self.readout_hidden == 0 {
            return bad("hidden", "layer widths must be positive".into());
        }
        if self.eval_every == 0 {
            return bad("eval_every", "must be at least 1".into());
        }
        if !(self.iou_threshold >= 0.0 && self.iou_threshold < 1.0) {
            return bad("iou_threshold", format!("{} outside [0, 1)", self.iou_threshold));
        }
        Ok(())
    }

    pub fn from_json(text: &str, source_name: &str) -> Result<Self, TrainError> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| TrainError::ConfigParse {
            source_name: source_name.to_string(),
            line: e.line(),
            message: e.to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, TrainError> {
        let text = std::fs::read_to_string(path).map_err(|e| TrainError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::from_json(&text, &path.display().to_string())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Model architecture for data with the given widths. Pinned widths in
    /// the config must agree with the data.
    pub fn model_config(
        &self,
        visual_dim: usize,
        word_dim: usize,
        n_actions: usize,
    ) -> Result<ModelConfig, TrainError> {
        for (field, pinned, found) in [
            ("visual_dim", self.visual_dim, visual_dim),
            ("word_dim", self.word_dim, word_dim),
            ("n_actions", self.n_actions, n_actions),
        ] {
            if let Some(p) = pinned.filter(|&p| p != found) {
                return Err(TrainError::InvalidConfig {
                    field,
                    message: format!("is {p} but the data has {found}"),
                });
            }
        }
        Ok(ModelConfig {
            variant: self.variant,
            visual_dim,
            word_dim,
            hidden: self.hidden,
            readout_hidden: self.readout_hidden,
            n_actions,
            attn_leaky: self.attn_leaky,
            dropout_scope: self.dropout_scope,
            human_objects: self.human_objects,
        })
    }
}
