use std::ops::Range;

use super::GraphError;
use crate::data::Detection;
use crate::features::{spatial_features, BoundingBox, EmbeddingTable, ImageMeta, SpatialFeature};

#[derive(Debug, Clone, PartialEq)]
pub struct GraphNode {
    /// Index into the detection list the graph was built from.
    pub detection: usize,
    pub class: String,
    pub is_human: bool,
    pub score: f64,
    pub bbox: BoundingBox,
    pub visual: Vec<f64>,
    pub semantic: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GraphEdge {
    pub src: usize,
    pub dst: usize,
    pub spatial: SpatialFeature,
}

/// Edge index arrays for a fully connected directed graph without
/// self-loops, with edges grouped by their anchor (source) node.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Topology {
    pub n: usize,
    pub src: Vec<usize>,
    pub dst: Vec<usize>,
    /// `segments[i]` holds the edge indices anchored at node `i`.
    pub segments: Vec<Range<usize>>,
}

impl Topology {
    pub fn complete(n: usize) -> Self {
        let mut src = Vec::with_capacity(n * n.saturating_sub(1));
        let mut dst = Vec::with_capacity(src.capacity());
        let mut segments = Vec::with_capacity(n);
        for i in 0..n {
            let start = src.len();
            for j in (0..n).filter(|&j| j != i) {
                src.push(i);
                dst.push(j);
            }
            segments.push(start..src.len());
        }
        Self {
            n,
            src,
            dst,
            segments,
        }
    }

    pub fn edge_count(&self) -> usize {
        self.src.len()
    }

    /// Index of the directed edge `i → j`.
    pub fn edge_index(&self, i: usize, j: usize) -> usize {
        debug_assert!(i != j && i < self.n && j < self.n);
        self.segments[i].start + if j < i { j } else { j - 1 }
    }
}

/// Fully connected scene graph over detections.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneGraph {
    pub image_id: String,
    pub image: ImageMeta,
    pub nodes: Vec<GraphNode>,
    pub edges: Vec<GraphEdge>,
    pub topology: Topology,
}

impl SceneGraph {
    pub fn n(&self) -> usize {
        self.nodes.len()
    }

    pub fn visual_dim(&self) -> usize {
        self.nodes.first().map_or(0, |n| n.visual.len())
    }

    pub fn word_dim(&self) -> usize {
        self.nodes.first().map_or(0, |n| n.semantic.len())
    }

    pub fn spatial(&self, i: usize, j: usize) -> &SpatialFeature {
        &self.edges[self.topology.edge_index(i, j)].spatial
    }

    pub fn has_human(&self) -> bool {
        self.nodes.iter().any(|n| n.is_human)
    }
}

/// Builds the graph: one node per detection, an edge with its own spatial
/// feature for every ordered pair.
pub fn build_graph(
    image_id: &str,
    detections: &[Detection],
    img: &ImageMeta,
    table: &EmbeddingTable,
) -> Result<SceneGraph, GraphError> {
    if detections.len() < 2 {
        return Err(GraphError::SceneTooSmall {
            image_id: image_id.to_string(),
            nodes: detections.len(),
        });
    }
    let visual_dim = detections[0].feature.len();
    let mut nodes = Vec::with_capacity(detections.len());
    for (i, det) in detections.iter().enumerate() {
        if det.feature.len() != visual_dim {
            return Err(GraphError::FeatureWidth {
                node: i,
                expected: visual_dim,
                found: det.feature.len(),
            });
        }
        nodes.push(GraphNode {
            detection: i,
            class: det.class.clone(),
            is_human: det.is_human(),
            score: det.score,
            bbox: det.bbox,
            visual: det.feature.clone(),
            semantic: table.lookup(&det.class)?.to_vec(),
        });
    }
    let topology = Topology::complete(nodes.len());
    let edges = topology
        .src
        .iter()
        .zip(&topology.dst)
        .map(|(&i, &j)| {
            Ok(GraphEdge {
                src: i,
                dst: j,
                spatial: spatial_features(&nodes[i].bbox, &nodes[j].bbox, img)?,
            })
        })
        .collect::<Result<Vec<_>, GraphError>>()?;
    Ok(SceneGraph {
        image_id: image_id.to_string(),
        image: *img,
        nodes,
        edges,
        topology,
    })
}
