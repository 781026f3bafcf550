//! Tape-level building blocks of the graph model. Each function records its
//! computation on the caller's [`Tape`] so the same code serves inference and
//! training.

use rand::RngCore;

use super::{GraphError, LayerRef, Topology};
use crate::numerics::{dropout_mask, Activation, Tape, Tensor, Var};

/// Dropout state threaded through a training-mode forward pass.
pub struct DropoutCtx<'r> {
    pub rate: f64,
    pub rng: &'r mut dyn RngCore,
}

impl DropoutCtx<'_> {
    pub(crate) fn apply(&mut self, tape: &mut Tape, x: Var) -> Result<Var, GraphError> {
        if self.rate == 0.0 {
            return Ok(x);
        }
        let mask = dropout_mask(tape.value(x).len(), self.rate, &mut *self.rng)?;
        Ok(tape.mask(x, mask)?)
    }
}

pub fn affine(tape: &mut Tape, x: Var, layer: LayerRef) -> Result<Var, GraphError> {
    let w = tape.param(layer.weight);
    let b = tape.param(layer.bias);
    Ok(tape.linear(x, w, b)?)
}

/// `h_e[i→j] = LeakyReLU(f_edge([h_i, s_ij, h_j]))`, one row per edge.
/// Without `leaky` the raw affine output is used.
pub fn visual_edge_latent(
    tape: &mut Tape,
    topo: &Topology,
    nodes: Var,
    spatial: Var,
    f_edge: LayerRef,
    leaky: bool,
) -> Result<Var, GraphError> {
    let src = tape.gather(nodes, &topo.src)?;
    let dst = tape.gather(nodes, &topo.dst)?;
    let input = tape.concat(&[src, spatial, dst])?;
    let out = affine(tape, input, f_edge)?;
    Ok(if leaky {
        tape.activation(out, Activation::LeakyRelu)
    } else {
        out
    })
}

/// Per-anchor softmax of the scalar `f_attn` logits of each edge.
pub fn attention_weights(
    tape: &mut Tape,
    topo: &Topology,
    edge_latent: Var,
    f_attn: LayerRef,
) -> Result<Var, GraphError> {
    let logits = affine(tape, edge_latent, f_attn)?;
    attention_from_logits(tape, topo, logits)
}

pub fn attention_from_logits(
    tape: &mut Tape,
    topo: &Topology,
    logits: Var,
) -> Result<Var, GraphError> {
    Ok(tape.segment_softmax(logits, &topo.segments)?)
}

/// `z_i = Σ_j α_ij (h_j ⊕ h_e[i→j])`. `messages` holds the (projected) node
/// features whose width must equal the edge-latent width.
pub fn visual_aggregate(
    tape: &mut Tape,
    topo: &Topology,
    alpha: Var,
    messages: Var,
    edge_latent: Var,
) -> Result<Var, GraphError> {
    let neighbours = tape.gather(messages, &topo.dst)?;
    let combined = tape.add(neighbours, edge_latent)?;
    Ok(tape.segment_sum(alpha, combined, &topo.src, topo.n)?)
}

/// `z_i = Σ_j α_ij x_j` with no edge contribution.
pub fn weighted_neighbour_sum(
    tape: &mut Tape,
    topo: &Topology,
    alpha: Var,
    nodes: Var,
) -> Result<Var, GraphError> {
    let neighbours = tape.gather(nodes, &topo.dst)?;
    Ok(tape.segment_sum(alpha, neighbours, &topo.src, topo.n)?)
}

/// `z_i = (1/|N_i|) Σ_j x_j`.
pub fn mean_aggregate(tape: &mut Tape, topo: &Topology, nodes: Var) -> Result<Var, GraphError> {
    let weights: Vec<f64> = topo
        .src
        .iter()
        .map(|&i| 1.0 / topo.segments[i].len() as f64)
        .collect();
    let w = tape.constant(Tensor::column(weights));
    weighted_neighbour_sum(tape, topo, w, nodes)
}

/// `h̃_i = ReLU(f_update([h_i, z_i]))`.
pub fn node_update(
    tape: &mut Tape,
    nodes: Var,
    aggregate: Var,
    f_update: LayerRef,
) -> Result<Var, GraphError> {
    let input = tape.concat(&[nodes, aggregate])?;
    let out = affine(tape, input, f_update)?;
    Ok(tape.activation(out, Activation::Relu))
}

/// Recorded intermediates of one graph-attention stream.
#[derive(Debug, Clone, Copy)]
pub struct StreamTrace {
    pub alpha: Option<Var>,
    pub edge_latent: Option<Var>,
    pub aggregate: Var,
    pub updated: Var,
}

/// Layers of an attention stream whose messages carry edge latents.
#[derive(Debug, Clone, Copy)]
pub struct VisualLayers {
    pub f_edge: Option<LayerRef>,
    pub f_attn: Option<LayerRef>,
    pub proj: Option<LayerRef>,
    pub f_update: LayerRef,
}

/// One visual-style pass. With attention layers present it applies edge
/// latents and attention; without them it averages the projected neighbour
/// features.
pub fn visual_stream(
    tape: &mut Tape,
    topo: &Topology,
    nodes: Var,
    spatial: Option<Var>,
    layers: VisualLayers,
    leaky: bool,
    mut dropout: Option<&mut DropoutCtx<'_>>,
) -> Result<StreamTrace, GraphError> {
    let messages = match layers.proj {
        Some(p) => affine(tape, nodes, p)?,
        None => nodes,
    };
    let (alpha, edge_latent, aggregate) = match (layers.f_edge, layers.f_attn) {
        (Some(f_edge), Some(f_attn)) => {
            let spatial = spatial.ok_or_else(|| {
                GraphError::LayoutMismatch("visual stream needs spatial edge features".into())
            })?;
            let mut h_e = visual_edge_latent(tape, topo, nodes, spatial, f_edge, leaky)?;
            if let Some(d) = dropout.as_deref_mut() {
                h_e = d.apply(tape, h_e)?;
            }
            let alpha = attention_weights(tape, topo, h_e, f_attn)?;
            let z = visual_aggregate(tape, topo, alpha, messages, h_e)?;
            (Some(alpha), Some(h_e), z)
        }
        _ => (None, None, mean_aggregate(tape, topo, messages)?),
    };
    let mut updated = node_update(tape, nodes, aggregate, layers.f_update)?;
    if let Some(d) = dropout {
        updated = d.apply(tape, updated)?;
    }
    Ok(StreamTrace {
        alpha,
        edge_latent,
        aggregate,
        updated,
    })
}

#[derive(Debug, Clone, Copy)]
pub struct SemanticLayers {
    pub f_edge: Option<LayerRef>,
    pub f_attn: Option<LayerRef>,
    pub f_update: LayerRef,
}

/// Semantic pass: attention from `[w_i, w_j]` only (edges carry no
/// features), then `z'_i = Σ α'_ij w_j` and `w̃_i = ReLU(f_update'([w_i, z'_i]))`.
pub fn semantic_pass(
    tape: &mut Tape,
    topo: &Topology,
    words: Var,
    layers: SemanticLayers,
    leaky: bool,
    mut dropout: Option<&mut DropoutCtx<'_>>,
) -> Result<StreamTrace, GraphError> {
    let (alpha, edge_latent, aggregate) = match (layers.f_edge, layers.f_attn) {
        (Some(f_edge), Some(f_attn)) => {
            let src = tape.gather(words, &topo.src)?;
            let dst = tape.gather(words, &topo.dst)?;
            let input = tape.concat(&[src, dst])?;
            let mut lat = affine(tape, input, f_edge)?;
            if leaky {
                lat = tape.activation(lat, Activation::LeakyRelu);
            }
            if let Some(d) = dropout.as_deref_mut() {
                lat = d.apply(tape, lat)?;
            }
            let alpha = attention_weights(tape, topo, lat, f_attn)?;
            let z = weighted_neighbour_sum(tape, topo, alpha, words)?;
            (Some(alpha), Some(lat), z)
        }
        _ => (None, None, mean_aggregate(tape, topo, words)?),
    };
    let mut updated = node_update(tape, words, aggregate, layers.f_update)?;
    if let Some(d) = dropout {
        updated = d.apply(tape, updated)?;
    }
    Ok(StreamTrace {
        alpha,
        edge_latent,
        aggregate,
        updated,
    })
}

/// Readout MLP over box pairs: `a = [γ_h, s_ho, γ_o]` (or `[γ_h, γ_o]` when
/// `pair_spatial` is `None`), hidden ReLU layer, then per-action logits.
#[allow(clippy::too_many_arguments)]
pub fn readout_logits(
    tape: &mut Tape,
    gamma: Var,
    humans: &[usize],
    objects: &[usize],
    pair_spatial: Option<Var>,
    hidden: LayerRef,
    out: LayerRef,
    dropout: Option<&mut DropoutCtx<'_>>,
) -> Result<Var, GraphError> {
    let h = tape.gather(gamma, humans)?;
    let o = tape.gather(gamma, objects)?;
    let input = match pair_spatial {
        Some(s) => tape.concat(&[h, s, o])?,
        None => tape.concat(&[h, o])?,
    };
    let pre = affine(tape, input, hidden)?;
    let mut act = tape.activation(pre, Activation::Relu);
    if let Some(d) = dropout {
        act = d.apply(tape, act)?;
    }
    affine(tape, act, out)
}
