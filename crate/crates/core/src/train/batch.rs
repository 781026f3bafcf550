use rand::seq::SliceRandom;
use rand::Rng;

use super::TrainError;
use crate::data::{filter_detections, SceneFixture, Vocabulary};
use crate::eval::iou;
use crate::features::{EmbeddingTable, ImageMeta};
use crate::graphnet::{build_graph, candidate_pairs, GraphError, SceneGraph};
use crate::numerics::Tensor;

/// A filtered scene turned into a graph, with one multi-hot label row per
/// candidate pair.
#[derive(Debug, Clone)]
pub struct PreparedScene {
    pub fixture: SceneFixture,
    pub graph: SceneGraph,
    pub pairs: Vec<(usize, usize)>,
    /// `pairs.len() × n_actions`.
    pub labels: Tensor,
}

impl PreparedScene {
    pub fn label_rows(&self, rows: &[usize]) -> Tensor {
        let n = self.labels.cols();
        let values = rows
            .iter()
            .flat_map(|&r| self.labels.row_slice(r).iter().copied())
            .collect();
        Tensor::matrix(rows.len(), n, values).expect("row-aligned labels")
    }
}

/// Label row per pair: action `a` is 1 when the scene has a ground truth
/// with action `a` and the pair's object class whose human and object boxes
/// both overlap the pair's boxes with IoU above `threshold`.
pub fn label_pairs(
    fixture: &SceneFixture,
    graph: &SceneGraph,
    pairs: &[(usize, usize)],
    vocab: &Vocabulary,
    threshold: f64,
) -> Tensor {
    let n = vocab.n_actions();
    let mut values = vec![0.0; pairs.len() * n];
    for (r, &(i, j)) in pairs.iter().enumerate() {
        let (h, o) = (&graph.nodes[i], &graph.nodes[j]);
        for gt in &fixture.gt_hois {
            if gt.object_class == o.class
                && iou(&h.bbox, &gt.human_box) > threshold
                && iou(&o.bbox, &gt.object_box) > threshold
            {
                if let Some(a) = vocab.action_index(&gt.action) {
                    values[r * n + a] = 1.0;
                }
            }
        }
    }
    Tensor::matrix(pairs.len(), n, values).expect("sized above")
}

/// Filters detections and builds the graph. `Ok(None)` when filtering
/// leaves fewer than two detections.
pub fn prepare_scene(
    fixture: &SceneFixture,
    vocab: &Vocabulary,
    table: &EmbeddingTable,
    human_objects: bool,
    threshold: f64,
) -> Result<Option<PreparedScene>, TrainError> {
    let filtered = filter_detections(fixture);
    let img = ImageMeta::new(filtered.width, filtered.height).map_err(GraphError::from)?;
    let graph = match build_graph(&filtered.image_id, &filtered.detections, &img, table) {
        Ok(g) => g,
        Err(GraphError::SceneTooSmall { .. }) => return Ok(None),
        Err(e) => return Err(e.into()),
    };
    let pairs = candidate_pairs(&graph, human_objects);
    let labels = label_pairs(&filtered, &graph, &pairs, vocab, threshold);
    Ok(Some(PreparedScene {
        fixture: filtered,
        graph,
        pairs,
        labels,
    }))
}

pub fn prepare_scenes(
    fixtures: &[SceneFixture],
    vocab: &Vocabulary,
    table: &EmbeddingTable,
    human_objects: bool,
    threshold: f64,
) -> Result<Vec<PreparedScene>, TrainError> {
    let mut out = Vec::with_capacity(fixtures.len());
    for f in fixtures {
        if let Some(p) = prepare_scene(f, vocab, table, human_objects, threshold)? {
            out.push(p);
        }
    }
    Ok(out)
}

/// Pair rows of one batch, grouped by scene.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Batch {
    /// `(scene index, pair rows)` in batch order.
    pub parts: Vec<(usize, Vec<usize>)>,
}

impl Batch {
    pub fn pair_count(&self) -> usize {
        self.parts.iter().map(|(_, r)| r.len()).sum()
    }
}

/// Shuffles the scene order, lays every scene's pairs out contiguously in
/// that order and cuts the sequence into batches of `batch_size` pairs. A
/// scene's pairs can straddle two batches.
pub fn make_batches<R: Rng + ?Sized>(
    scenes: &[PreparedScene],
    batch_size: usize,
    rng: &mut R,
) -> Result<Vec<Batch>, TrainError> {
    if batch_size == 0 {
        return Err(TrainError::InvalidConfig {
            field: "batch_size",
            message: "must be at least 1".into(),
        });
    }
    if scenes.iter().all(|s| s.pairs.is_empty()) {
        return Err(TrainError::NoLabeledPairs);
    }
    let mut order: Vec<usize> = (0..scenes.len()).collect();
    order.shuffle(rng);
    let mut batches = Vec::new();
    let mut current = Batch { parts: Vec::new() };
    let mut filled = 0;
    for s in order {
        let mut row = 0;
        let n = scenes[s].pairs.len();
        while row < n {
            let take = (batch_size - filled).min(n - row);
            current.parts.push((s, (row..row + take).collect()));
            row += take;
            filled += take;
            if filled == batch_size {
                batches.push(std::mem::replace(&mut current, Batch { parts: Vec::new() }));
                filled = 0;
            }
        }
    }
    if filled > 0 {
        batches.push(current);
    }
    Ok(batches)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Detection, GtHoi, HUMAN_CLASS};
    use crate::features::BoundingBox;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn vocab() -> Vocabulary {
        Vocabulary::new(
            vec!["hold".into(), "cut".into(), "eat".into()],
            vec![HUMAN_CLASS.into(), "cake".into(), "cup".into()],
        )
    }

    fn table() -> EmbeddingTable {
        EmbeddingTable::new(
            2,
            vec![
                (HUMAN_CLASS.into(), vec![1.0, 0.0]),
                ("cake".into(), vec![0.0, 1.0]),
                ("cup".into(), vec![1.0, 1.0]),
            ],
        )
        .unwrap()
    }

    fn det(class: &str, b: BoundingBox, score: f64) -> Detection {
        Detection {
            bbox: b,
            class: class.into(),
            score,
            feature: vec![0.1, 0.2],
        }
    }

    fn scene(n_objects: usize) -> SceneFixture {
        let h = BoundingBox::new(0.0, 0.0, 50.0, 100.0);
        let mut detections = vec![det(HUMAN_CLASS, h, 0.95)];
        let mut gt_hois = Vec::new();
        for k in 0..n_objects {
            let x = 60.0 + 40.0 * k as f64;
            let o = BoundingBox::new(x, 10.0, x + 30.0, 40.0);
            detections.push(det("cake", o, 0.9));
            if k == 0 {
                for a in ["cut", "eat"] {
                    gt_hois.push(GtHoi {
                        human_box: h,
                        object_box: o,
                        object_class: "cake".into(),
                        action: a.into(),
                    });
                }
            }
        }
        SceneFixture {
            image_id: format!("s{n_objects}"),
            width: 800.0,
            height: 200.0,
            detections,
            gt_hois,
        }
    }

    #[test]
    fn pairs_on_gt_get_multi_hot_labels() {
        let p = prepare_scene(&scene(2), &vocab(), &table(), false, 0.5).unwrap().unwrap();
        assert_eq!(p.pairs, vec![(0, 1), (0, 2)]);
        assert_eq!(p.labels.row_slice(0), &[0.0, 1.0, 1.0]);
        assert_eq!(p.labels.row_slice(1), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn too_small_after_filtering_is_skipped() {
        let mut s = scene(1);
        s.detections[1].score = 0.3;
        assert!(prepare_scene(&s, &vocab(), &table(), false, 0.5).unwrap().is_none());
    }

    #[test]
    fn batch_arithmetic_and_determinism() {
        // 8 scenes × 8 pairs = 64 pairs
        let scenes: Vec<PreparedScene> = (0..8)
            .map(|_| prepare_scene(&scene(8), &vocab(), &table(), false, 0.5).unwrap().unwrap())
            .collect();
        let a = make_batches(&scenes, 32, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(a.len(), 2);
        assert!(a.iter().all(|b| b.pair_count() == 32));
        let b = make_batches(&scenes, 32, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(a, b);
        let odd = make_batches(&scenes, 5, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(odd.len(), 13);
        let mut seen: Vec<(usize, usize)> = odd
            .iter()
            .flat_map(|b| b.parts.iter().flat_map(|(s, rows)| rows.iter().map(move |&r| (*s, r))))
            .collect();
        seen.sort_unstable();
        assert_eq!(seen.len(), 64);
        seen.dedup();
        assert_eq!(seen.len(), 64);
    }

    #[test]
    fn no_pairs_is_an_error() {
        let mut s = scene(2);
        for d in &mut s.detections {
            d.class = "cup".into();
        }
        s.gt_hois.clear();
        let p = prepare_scene(&s, &vocab(), &table(), false, 0.5).unwrap().unwrap();
        assert!(matches!(
            make_batches(&[p], 4, &mut ChaCha8Rng::seed_from_u64(0)),
            Err(TrainError::NoLabeledPairs)
        ));
    }
}
