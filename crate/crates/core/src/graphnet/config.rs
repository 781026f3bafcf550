use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::features::SPATIAL_LEN;

/// Model variant: the full dual-graph model, the six ablations, and a
/// context-free pair baseline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Variant {
    /// Visual-spatial and semantic attention graphs, fused, box-pair readout.
    #[serde(rename = "full")]
    Full,
    /// Visual-spatial graph only.
    #[serde(rename = "01")]
    VisualOnly,
    /// Semantic graph only.
    #[serde(rename = "02")]
    SemanticOnly,
    /// Neighbour averaging instead of attention in both streams.
    #[serde(rename = "03")]
    NoAttention,
    /// Readout without the spatial edge feature.
    #[serde(rename = "04")]
    NoSpatialReadout,
    /// Extra attention pass over the combined graph.
    #[serde(rename = "05")]
    CombinedMessagePassing,
    /// One graph over concatenated visual and semantic node features.
    #[serde(rename = "06")]
    Unified,
    /// No aggregation: readout directly on raw pair features.
    #[serde(rename = "baseline-pair-only")]
    PairOnly,
}

impl Variant {
    pub const ALL: [Variant; 8] = [
        Variant::Full,
        Variant::VisualOnly,
        Variant::SemanticOnly,
        Variant::NoAttention,
        Variant::NoSpatialReadout,
        Variant::CombinedMessagePassing,
        Variant::Unified,
        Variant::PairOnly,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::VisualOnly => "01",
            Variant::SemanticOnly => "02",
            Variant::NoAttention => "03",
            Variant::NoSpatialReadout => "04",
            Variant::CombinedMessagePassing => "05",
            Variant::Unified => "06",
            Variant::PairOnly => "baseline-pair-only",
        }
    }

    pub fn uses_visual_stream(self) -> bool {
        matches!(
            self,
            Variant::Full
                | Variant::VisualOnly
                | Variant::NoAttention
                | Variant::NoSpatialReadout
                | Variant::CombinedMessagePassing
        )
    }

    pub fn uses_semantic_stream(self) -> bool {
        matches!(
            self,
            Variant::Full
                | Variant::SemanticOnly
                | Variant::NoAttention
                | Variant::NoSpatialReadout
                | Variant::CombinedMessagePassing
        )
    }

    pub fn uses_attention(self) -> bool {
        !matches!(self, Variant::NoAttention | Variant::PairOnly)
    }

    pub fn readout_has_spatial(self) -> bool {
        self != Variant::NoSpatialReadout
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for Variant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Variant::ALL
            .into_iter()
            .find(|v| v.tag() == s)
            .ok_or_else(|| format!("unknown variant `{s}`"))
    }
}

/// Where dropout is applied during training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DropoutScope {
    /// Readout MLP hidden layer only.
    #[default]
    ReadoutOnly,
    /// Readout hidden layer plus every edge-latent and node-update output.
    AllHidden,
}

/// Architecture hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub variant: Variant,
    /// Visual node feature width `d`.
    pub visual_dim: usize,
    /// Word-embedding width.
    pub word_dim: usize,
    /// Output width of the edge and update functions (1024 in the full-size model).
    pub hidden: usize,
    /// Readout MLP hidden width (1024 in the full-size model).
    pub readout_hidden: usize,
    pub n_actions: usize,
    /// LeakyReLU between the edge function and the attention function.
    #[serde(default = "yes")]
    pub attn_leaky: bool,
    #[serde(default)]
    pub dropout_scope: DropoutScope,
    /// Pair humans with other humans as objects.
    #[serde(default)]
    pub human_objects: bool,
}

fn yes() -> bool {
    true
}

impl ModelConfig {
    pub fn full_scale(variant: Variant, visual_dim: usize, word_dim: usize, n_actions: usize) -> Self {
        Self {
            variant,
            visual_dim,
            word_dim,
            hidden: 1024,
            readout_hidden: 1024,
            n_actions,
            attn_leaky: true,
            dropout_scope: DropoutScope::ReadoutOnly,
            human_objects: false,
        }
    }

    pub fn toy(variant: Variant, visual_dim: usize, word_dim: usize, n_actions: usize) -> Self {
        Self {
            hidden: 64,
            readout_hidden: 64,
            ..Self::full_scale(variant, visual_dim, word_dim, n_actions)
        }
    }

    /// Width of the per-node representation fed to the readout.
    pub fn node_repr_dim(&self) -> usize {
        match self.variant {
            Variant::Full
            | Variant::NoAttention
            | Variant::NoSpatialReadout
            | Variant::CombinedMessagePassing => 2 * self.hidden,
            Variant::VisualOnly | Variant::SemanticOnly | Variant::Unified => self.hidden,
            Variant::PairOnly => self.visual_dim + self.word_dim,
        }
    }

    pub fn readout_input_dim(&self) -> usize {
        let spatial = if self.variant.readout_has_spatial() {
            SPATIAL_LEN
        } else {
            0
        };
        2 * self.node_repr_dim() + spatial
    }

    /// Every learnable tensor of this configuration, in checkpoint order.
    pub fn layout(&self) -> Vec<(String, Vec<usize>)> {
        let mut out = Vec::new();
        let mut layer = |name: &str, input: usize, output: usize| {
            out.push((format!("{name}.weight"), vec![output, input]));
            out.push((format!("{name}.bias"), vec![1, output]));
        };
        let (d, w, h) = (self.visual_dim, self.word_dim, self.hidden);
        let attention = self.variant.uses_attention();
        if self.variant.uses_visual_stream() {
            if attention {
                layer("visual.f_edge", 2 * d + SPATIAL_LEN, h);
                layer("visual.f_attn", h, 1);
            }
            if d != h {
                layer("visual.proj", d, h);
            }
            layer("visual.f_update", d + h, h);
        }
        if self.variant.uses_semantic_stream() {
            if attention {
                layer("semantic.f_edge", 2 * w, h);
                layer("semantic.f_attn", h, 1);
            }
            layer("semantic.f_update", 2 * w, h);
        }
        if self.variant == Variant::CombinedMessagePassing {
            let g = 2 * h;
            layer("combined.f_edge", 2 * g + SPATIAL_LEN, g);
            layer("combined.f_attn", g, 1);
            layer("combined.f_update", 2 * g, g);
        }
        if self.variant == Variant::Unified {
            let u = d + w;
            layer("unified.f_edge", 2 * u + SPATIAL_LEN, h);
            layer("unified.f_attn", h, 1);
            if u != h {
                layer("unified.proj", u, h);
            }
            layer("unified.f_update", u + h, h);
        }
        layer("readout.hidden", self.readout_input_dim(), self.readout_hidden);
        layer("readout.out", self.readout_hidden, self.n_actions);
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn variant_tags_round_trip() {
        for v in Variant::ALL {
            assert_eq!(v.tag().parse::<Variant>().unwrap(), v);
            let json = serde_json::to_string(&v).unwrap();
            assert_eq!(json, format!("\"{}\"", v.tag()));
        }
        assert!("07".parse::<Variant>().is_err());
    }

    #[test]
    fn full_scale_dimensions() {
        let full = ModelConfig::full_scale(Variant::Full, 1024, 300, 117);
        assert_eq!(full.node_repr_dim(), 2048);
        assert_eq!(full.readout_input_dim(), 2 * 2048 + 11);
        let layout = full.layout();
        let shape = |n: &str| layout.iter().find(|(k, _)| k == n).map(|(_, s)| s.clone());
        assert_eq!(shape("visual.f_edge.weight"), Some(vec![1024, 2 * 1024 + 11]));
        assert_eq!(shape("visual.f_attn.weight"), Some(vec![1, 1024]));
        assert_eq!(shape("visual.f_update.weight"), Some(vec![1024, 2048]));
        assert_eq!(shape("visual.proj.weight"), None);
        assert_eq!(shape("semantic.f_edge.weight"), Some(vec![1024, 600]));
        assert_eq!(shape("semantic.f_update.weight"), Some(vec![1024, 600]));
        assert_eq!(shape("readout.hidden.weight"), Some(vec![1024, 4107]));
        assert_eq!(shape("readout.out.weight"), Some(vec![117, 1024]));

        let v01 = ModelConfig::full_scale(Variant::VisualOnly, 1024, 300, 117);
        assert_eq!(v01.node_repr_dim(), 1024);
        assert!(v01.layout().iter().all(|(n, _)| !n.starts_with("semantic")));
        let v02 = ModelConfig::full_scale(Variant::SemanticOnly, 1024, 300, 117);
        assert!(v02.layout().iter().all(|(n, _)| !n.starts_with("visual")));
    }

    #[test]
    fn projection_only_when_widths_differ() {
        let toy = ModelConfig::toy(Variant::Full, 16, 32, 5);
        assert!(toy.layout().iter().any(|(n, _)| n == "visual.proj.weight"));
        let no_attn = ModelConfig::toy(Variant::NoAttention, 16, 32, 5);
        assert!(no_attn.layout().iter().all(|(n, _)| !n.contains("f_attn") && !n.contains("f_edge")));
        let v04 = ModelConfig::toy(Variant::NoSpatialReadout, 16, 32, 5);
        assert_eq!(v04.readout_input_dim(), 4 * 64);
    }
}
