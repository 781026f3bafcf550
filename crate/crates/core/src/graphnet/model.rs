use super::layers::{
    readout_logits, semantic_pass, visual_stream, DropoutCtx, SemanticLayers, StreamTrace,
    VisualLayers,
};
use super::{build_graph, DropoutScope, GraphError, ModelParams, SceneGraph, Variant};
use crate::data::SceneFixture;
use crate::features::{BoundingBox, EmbeddingTable, ImageMeta, SPATIAL_LEN};
use crate::numerics::{sigmoid, Gradients, Tape, Tensor, Var};

/// One scored human-object candidate.
#[derive(Debug, Clone, PartialEq)]
pub struct HoiPrediction {
    /// Node indices of the pair within its scene graph.
    pub human: usize,
    pub object: usize,
    pub human_box: BoundingBox,
    pub object_box: BoundingBox,
    pub object_class: String,
    pub human_score: f64,
    pub object_score: f64,
    /// `S_a`, one sigmoid score per action.
    pub action_scores: Vec<f64>,
    /// `S_R = s_h · s_o · S_a`.
    pub triplet_scores: Vec<f64>,
}

/// Values of one attention stream after a forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct StreamState {
    /// Attention weight per directed edge, `n(n-1) × 1`. Absent when the
    /// stream averages its neighbours.
    pub alpha: Option<Tensor>,
    pub edge_latent: Option<Tensor>,
    pub aggregate: Tensor,
    pub updated: Tensor,
}

/// Node and edge state produced by the graph stage, before readout.
#[derive(Debug, Clone, PartialEq)]
pub struct UpdatedGraph {
    pub visual: Option<StreamState>,
    pub semantic: Option<StreamState>,
    /// Extra pass over the combined graph (variant 05) or the single unified
    /// graph (variant 06).
    pub combined: Option<StreamState>,
    /// Per-node representation fed to the readout.
    pub gamma: Tensor,
}

/// A recorded forward pass over one scene graph.
pub struct ForwardPass<'p> {
    tape: Tape<'p>,
    pairs: Vec<(usize, usize)>,
    logits: Option<Var>,
    gamma: Var,
    visual: Option<StreamTrace>,
    semantic: Option<StreamTrace>,
    combined: Option<StreamTrace>,
}

/// Box pairs scored by the readout: every human with every other node,
/// skipping human objects unless `human_objects` is set.
pub fn candidate_pairs(graph: &SceneGraph, human_objects: bool) -> Vec<(usize, usize)> {
    let mut pairs = Vec::new();
    for i in (0..graph.n()).filter(|&i| graph.nodes[i].is_human) {
        for (j, o) in graph.nodes.iter().enumerate() {
            if j != i && (human_objects || !o.is_human) {
                pairs.push((i, j));
            }
        }
    }
    pairs
}

fn node_matrix(graph: &SceneGraph, f: impl Fn(&super::GraphNode) -> &[f64]) -> Result<Tensor, GraphError> {
    let rows: Vec<Vec<f64>> = graph.nodes.iter().map(|n| f(n).to_vec()).collect();
    Ok(Tensor::from_rows(&rows)?)
}

fn check_width(what: &str, expected: usize, found: usize) -> Result<(), GraphError> {
    if expected == found {
        Ok(())
    } else {
        Err(GraphError::LayoutMismatch(format!(
            "{what} width is {found}, the model expects {expected}"
        )))
    }
}

/// Runs the configured variant over `graph`. Passing a dropout context puts
/// the model in training mode.
pub fn forward_graph<'p>(
    params: &'p ModelParams,
    graph: &SceneGraph,
    mut dropout: Option<DropoutCtx<'_>>,
) -> Result<ForwardPass<'p>, GraphError> {
    let cfg = params.config();
    let variant = cfg.variant;
    check_width("visual feature", cfg.visual_dim, graph.visual_dim())?;
    check_width("word embedding", cfg.word_dim, graph.word_dim())?;
    let mut tape = Tape::new(params.tensors());
    let topo = &graph.topology;
    let leaky = cfg.attn_leaky;
    let all_hidden = cfg.dropout_scope == DropoutScope::AllHidden;

    let h_v = tape.constant(node_matrix(graph, |n| &n.visual)?);
    let w = tape.constant(node_matrix(graph, |n| &n.semantic)?);
    let spatial_rows: Vec<f64> = graph
        .edges
        .iter()
        .flat_map(|e| e.spatial.values)
        .collect();
    let spatial = tape.constant(Tensor::matrix(graph.edges.len(), SPATIAL_LEN, spatial_rows)?);

    let attention = variant.uses_attention();
    let opt = |name: &str| if attention { params.layer(name) } else { None };

    let mut visual = None;
    let mut semantic = None;
    let mut combined = None;
    if variant.uses_visual_stream() {
        let layers = VisualLayers {
            f_edge: opt("visual.f_edge"),
            f_attn: opt("visual.f_attn"),
            proj: params.layer("visual.proj"),
            f_update: params.require("visual.f_update")?,
        };
        let d = if all_hidden { dropout.as_mut() } else { None };
        visual = Some(visual_stream(&mut tape, topo, h_v, Some(spatial), layers, leaky, d)?);
    }
    if variant.uses_semantic_stream() {
        let layers = SemanticLayers {
            f_edge: opt("semantic.f_edge"),
            f_attn: opt("semantic.f_attn"),
            f_update: params.require("semantic.f_update")?,
        };
        let d = if all_hidden { dropout.as_mut() } else { None };
        semantic = Some(semantic_pass(&mut tape, topo, w, layers, leaky, d)?);
    }

    let gamma = match variant {
        Variant::VisualOnly => visual.expect("visual stream ran").updated,
        Variant::SemanticOnly => semantic.expect("semantic stream ran").updated,
        Variant::PairOnly => tape.concat(&[h_v, w])?,
        Variant::Unified => {
            let nodes = tape.concat(&[h_v, w])?;
            let layers = VisualLayers {
                f_edge: Some(params.require("unified.f_edge")?),
                f_attn: Some(params.require("unified.f_attn")?),
                proj: params.layer("unified.proj"),
                f_update: params.require("unified.f_update")?,
            };
            let d = if all_hidden { dropout.as_mut() } else { None };
            let trace = visual_stream(&mut tape, topo, nodes, Some(spatial), layers, leaky, d)?;
            combined = Some(trace);
            trace.updated
        }
        _ => {
            let v = visual.expect("visual stream ran").updated;
            let s = semantic.expect("semantic stream ran").updated;
            let fused = tape.concat(&[v, s])?;
            if variant == Variant::CombinedMessagePassing {
                let layers = VisualLayers {
                    f_edge: Some(params.require("combined.f_edge")?),
                    f_attn: Some(params.require("combined.f_attn")?),
                    proj: None,
                    f_update: params.require("combined.f_update")?,
                };
                let d = if all_hidden { dropout.as_mut() } else { None };
                let trace = visual_stream(&mut tape, topo, fused, Some(spatial), layers, leaky, d)?;
                combined = Some(trace);
                trace.updated
            } else {
                fused
            }
        }
    };

    let pairs = candidate_pairs(graph, cfg.human_objects);
    let logits = if pairs.is_empty() {
        None
    } else {
        let humans: Vec<usize> = pairs.iter().map(|p| p.0).collect();
        let objects: Vec<usize> = pairs.iter().map(|p| p.1).collect();
        let pair_spatial = if variant.readout_has_spatial() {
            let edges: Vec<usize> = pairs.iter().map(|&(i, j)| topo.edge_index(i, j)).collect();
            Some(tape.gather(spatial, &edges)?)
        } else {
            None
        };
        Some(readout_logits(
            &mut tape,
            gamma,
            &humans,
            &objects,
            pair_spatial,
            params.require("readout.hidden")?,
            params.require("readout.out")?,
            dropout.as_mut(),
        )?)
    };

    Ok(ForwardPass {
        tape,
        pairs,
        logits,
        gamma,
        visual,
        semantic,
        combined,
    })
}

/// Builds the graph for an already filtered scene and runs the model in
/// evaluation mode.
pub fn forward(
    scene: &SceneFixture,
    params: &ModelParams,
    table: &EmbeddingTable,
) -> Result<(SceneGraph, Vec<HoiPrediction>), GraphError> {
    let img = ImageMeta::new(scene.width, scene.height)?;
    let graph = build_graph(&scene.image_id, &scene.detections, &img, table)?;
    let pass = forward_graph(params, &graph, None)?;
    let preds = pass.predictions(&graph);
    Ok((graph, preds))
}

impl<'p> ForwardPass<'p> {
    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.pairs
    }

    pub fn tape(&self) -> &Tape<'p> {
        &self.tape
    }

    /// Readout logits, one row per pair; `None` when the scene has no pairs.
    pub fn logits(&self) -> Option<&Tensor> {
        self.logits.map(|v| self.tape.value(v))
    }

    pub fn predictions(&self, graph: &SceneGraph) -> Vec<HoiPrediction> {
        let Some(logits) = self.logits() else {
            return Vec::new();
        };
        self.pairs
            .iter()
            .enumerate()
            .map(|(r, &(i, j))| {
                let (h, o) = (&graph.nodes[i], &graph.nodes[j]);
                let action_scores: Vec<f64> = logits.row_slice(r).iter().map(|&z| sigmoid(z)).collect();
                let triplet_scores = action_scores.iter().map(|s| h.score * o.score * s).collect();
                HoiPrediction {
                    human: i,
                    object: j,
                    human_box: h.bbox,
                    object_box: o.bbox,
                    object_class: o.class.clone(),
                    human_score: h.score,
                    object_score: o.score,
                    action_scores,
                    triplet_scores,
                }
            })
            .collect()
    }

    pub fn updated_graph(&self) -> UpdatedGraph {
        let snap = |t: &Option<StreamTrace>| {
            t.map(|t| StreamState {
                alpha: t.alpha.map(|v| self.tape.value(v).clone()),
                edge_latent: t.edge_latent.map(|v| self.tape.value(v).clone()),
                aggregate: self.tape.value(t.aggregate).clone(),
                updated: self.tape.value(t.updated).clone(),
            })
        };
        UpdatedGraph {
            visual: snap(&self.visual),
            semantic: snap(&self.semantic),
            combined: snap(&self.combined),
            gamma: self.tape.value(self.gamma).clone(),
        }
    }

    /// Records `Σ bce(sigmoid(z), y) / norm` over the selected pair rows.
    /// `labels` is `rows.len() × n_actions`.
    pub fn loss(&mut self, rows: &[usize], labels: Tensor, norm: f64) -> Result<Var, GraphError> {
        let logits = self.logits.ok_or_else(|| {
            GraphError::LayoutMismatch("loss requested for a scene without box pairs".into())
        })?;
        let picked = if rows.len() == self.pairs.len() && rows.iter().enumerate().all(|(a, &b)| a == b)
        {
            logits
        } else {
            self.tape.gather(logits, rows)?
        };
        Ok(self.tape.sigmoid_bce(picked, labels, norm)?)
    }

    pub fn loss_value(&self, loss: Var) -> f64 {
        self.tape.value(loss).values()[0]
    }

    pub fn backward(&self, loss: Var) -> Result<Gradients, GraphError> {
        Ok(self.tape.backward(loss)?)
    }
}
