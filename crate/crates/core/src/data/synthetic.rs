//! Seeded synthetic world with planted interaction rules.
//!
//! Every human-object pair carries exactly one action. Ordinary classes get
//! their action from a pair rule over (object class, spatial bucket).
//! Context classes ignore geometry: their action depends only on whether
//! their trigger class appears anywhere in the same scene, so a model that
//! looks at the pair alone cannot do better than chance on them.

use std::collections::BTreeMap;
use std::f64::consts::TAU;
use std::path::Path;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{
    build_manifest, write_file, DataError, DatasetManifest, Detection, GtHoi, SceneFixture,
    Vocabulary, EMBEDDINGS_FILE, HUMAN_CLASS, MANIFEST_FILE, SCENE_DIR,
};
use crate::eval::iou;
use crate::features::{BoundingBox, EmbeddingTable, DEFAULT_EMBEDDING_DIM};

pub const RULES_FILE: &str = "rules.json";
/// Object and human boxes with IoU above this are in the `overlap` bucket.
pub const OVERLAP_IOU: f64 = 0.3;
const IMAGE_W: f64 = 640.0;
const IMAGE_H: f64 = 480.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpatialBucket {
    Above,
    Below,
    Overlap,
    Beside,
}

impl SpatialBucket {
    pub const ALL: [SpatialBucket; 4] = [
        SpatialBucket::Above,
        SpatialBucket::Below,
        SpatialBucket::Overlap,
        SpatialBucket::Beside,
    ];
}

/// Overlap when IoU exceeds [`OVERLAP_IOU`]; otherwise the dominant axis of
/// the centre displacement from human to object decides (image y grows
/// downwards, ties go to `Beside`).
pub fn spatial_bucket(human: &BoundingBox, object: &BoundingBox) -> SpatialBucket {
    if iou(human, object) > OVERLAP_IOU {
        return SpatialBucket::Overlap;
    }
    let (hx, hy) = human.center();
    let (ox, oy) = object.center();
    let (dx, dy) = (ox - hx, oy - hy);
    if dy.abs() > dx.abs() {
        if dy < 0.0 {
            SpatialBucket::Above
        } else {
            SpatialBucket::Below
        }
    } else {
        SpatialBucket::Beside
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticParams {
    pub n_scenes: usize,
    pub n_object_classes: usize,
    pub n_actions: usize,
    /// Share of object classes governed by a context rule.
    pub context_fraction: f64,
    pub visual_dim: usize,
    pub embedding_dim: usize,
    /// Maximum absolute per-coordinate detection jitter in pixels.
    pub box_jitter: f64,
    /// Standard deviation of the noise added to visual features.
    pub feature_noise: f64,
    pub train_fraction: f64,
}

impl Default for SyntheticParams {
    fn default() -> Self {
        Self {
            n_scenes: 100,
            n_object_classes: 6,
            n_actions: 6,
            context_fraction: 0.5,
            visual_dim: 16,
            embedding_dim: DEFAULT_EMBEDDING_DIM,
            box_jitter: 2.0,
            feature_noise: 0.05,
            train_fraction: 0.8,
        }
    }
}

impl SyntheticParams {
    pub fn context_class_count(&self) -> usize {
        (self.context_fraction * self.n_object_classes as f64).round() as usize
    }

    pub fn validate(&self) -> Result<(), DataError> {
        let bad = |name: &'static str, message: String| Err(DataError::InvalidParameter { name, message });
        if self.n_scenes == 0 {
            return bad("n_scenes", "must be positive".into());
        }
        if self.n_object_classes == 0 {
            return bad("n_object_classes", "must be positive".into());
        }
        if self.n_actions < 2 {
            return bad("n_actions", format!("{} given, at least 2 needed", self.n_actions));
        }
        if !(0.0..=1.0).contains(&self.context_fraction) {
            return bad("context_fraction", format!("{} outside [0, 1]", self.context_fraction));
        }
        let n_ctx = self.context_class_count();
        if n_ctx > 0 && n_ctx >= self.n_object_classes {
            return bad(
                "context_fraction",
                format!("{n_ctx} context classes leave no class to act as a trigger"),
            );
        }
        if self.visual_dim == 0 {
            return bad("visual_dim", "must be positive".into());
        }
        if self.embedding_dim < 2 {
            return bad("embedding_dim", "at least 2 needed".into());
        }
        if !(self.box_jitter >= 0.0 && self.box_jitter <= 10.0) {
            return bad("box_jitter", format!("{} outside [0, 10]", self.box_jitter));
        }
        if !(self.feature_noise >= 0.0 && self.feature_noise.is_finite()) {
            return bad("feature_noise", format!("{} is not a non-negative number", self.feature_noise));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction <= 1.0) {
            return bad("train_fraction", format!("{} outside (0, 1]", self.train_fraction));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextRule {
    pub class: String,
    pub trigger: String,
    pub present_action: String,
    pub absent_action: String,
}

/// The planted rules, written next to the scenes so tests can replay them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuleTable {
    pub overlap_iou: f64,
    /// `pair_rules[class][bucket]` for every class not under a context rule.
    pub pair_rules: BTreeMap<String, BTreeMap<SpatialBucket, String>>,
    pub context_rules: Vec<ContextRule>,
    /// Each trigger's embedding as a convex combination of other classes'
    /// embeddings.
    pub trigger_mixtures: BTreeMap<String, Vec<(String, f64)>>,
}

impl RuleTable {
    pub fn context_rule(&self, class: &str) -> Option<&ContextRule> {
        self.context_rules.iter().find(|r| r.class == class)
    }

    /// Action of a pair given the classes present in the scene.
    pub fn label(
        &self,
        object_class: &str,
        bucket: SpatialBucket,
        scene_classes: &[&str],
    ) -> Option<&str> {
        if let Some(rule) = self.context_rule(object_class) {
            let present = scene_classes.contains(&rule.trigger.as_str());
            return Some(if present {
                &rule.present_action
            } else {
                &rule.absent_action
            });
        }
        self.pair_rules.get(object_class)?.get(&bucket).map(String::as_str)
    }

    /// HOI categories (`action:object`) produced by context rules.
    pub fn context_categories(&self) -> Vec<(String, String)> {
        let mut out: Vec<(String, String)> = self
            .context_rules
            .iter()
            .flat_map(|r| {
                [
                    (r.present_action.clone(), r.class.clone()),
                    (r.absent_action.clone(), r.class.clone()),
                ]
            })
            .collect();
        out.sort();
        out.dedup();
        out
    }

    pub fn load(path: &Path) -> Result<Self, DataError> {
        let text = std::fs::read_to_string(path).map_err(|e| DataError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        serde_json::from_str(&text).map_err(|e| DataError::Parse {
            source_name: path.display().to_string(),
            line: e.line(),
            message: e.to_string(),
        })
    }
}

/// Everything needed to draw scenes: vocabulary, rules, embeddings and the
/// visual feature encoder.
#[derive(Debug, Clone)]
pub struct SyntheticWorld {
    pub params: SyntheticParams,
    pub vocab: Vocabulary,
    pub rules: RuleTable,
    pub embeddings: EmbeddingTable,
    /// `visual_dim × (n_classes + 5)` random encoder of `[one-hot, geometry]`.
    encoder: Vec<Vec<f64>>,
    object_classes: Vec<String>,
    context_classes: Vec<String>,
}

fn action_name(a: usize) -> String {
    format!("act{a}")
}

fn object_name(o: usize) -> String {
    format!("obj{o}")
}

impl SyntheticWorld {
    pub fn new<R: Rng + ?Sized>(params: &SyntheticParams, rng: &mut R) -> Result<Self, DataError> {
        params.validate()?;
        let actions: Vec<String> = (0..params.n_actions).map(action_name).collect();
        let object_classes: Vec<String> = (0..params.n_object_classes).map(object_name).collect();
        let mut all_classes = vec![HUMAN_CLASS.to_string()];
        all_classes.extend(object_classes.iter().cloned());

        let mut shuffled = object_classes.clone();
        shuffled.shuffle(rng);
        let n_ctx = params.context_class_count();
        let (ctx, plain) = shuffled.split_at(n_ctx);
        let mut context_classes = ctx.to_vec();
        context_classes.sort();
        let mut plain = plain.to_vec();
        plain.sort();

        let mut context_rules = Vec::new();
        for c in &context_classes {
            let trigger = plain.choose(rng).expect("validated: a trigger exists").clone();
            let present = rng.random_range(0..params.n_actions);
            let mut absent = rng.random_range(0..params.n_actions - 1);
            if absent >= present {
                absent += 1;
            }
            context_rules.push(ContextRule {
                class: c.clone(),
                trigger,
                present_action: action_name(present),
                absent_action: action_name(absent),
            });
        }
        let mut pair_rules = BTreeMap::new();
        for c in &plain {
            let table = SpatialBucket::ALL
                .iter()
                .map(|&b| (b, action_name(rng.random_range(0..params.n_actions))))
                .collect();
            pair_rules.insert(c.clone(), table);
        }
        let mut triggers: Vec<String> = context_rules.iter().map(|r| r.trigger.clone()).collect();
        triggers.sort();
        triggers.dedup();

        // Non-trigger classes sit on a circle in a random plane; triggers are
        // convex mixtures of them, so no hyperplane separates the two sets.
        let anchors: Vec<&String> = all_classes.iter().filter(|c| !triggers.contains(c)).collect();
        let k = anchors.len();
        let phase = rng.random_range(0.0..TAU);
        let mut planar: BTreeMap<String, [f64; 2]> = BTreeMap::new();
        for (i, c) in anchors.iter().enumerate() {
            let t = phase + TAU * i as f64 / k as f64;
            planar.insert((*c).clone(), [t.cos(), t.sin()]);
        }
        let mut trigger_mixtures = BTreeMap::new();
        for t in &triggers {
            let picks: Vec<&String> = if k <= 3 {
                anchors.clone()
            } else {
                anchors.choose_multiple(rng, 3).copied().collect()
            };
            let raw: Vec<f64> = picks.iter().map(|_| rng.random_range(0.2..1.0)).collect();
            let total: f64 = raw.iter().sum();
            let mix: Vec<(String, f64)> = picks
                .iter()
                .zip(&raw)
                .map(|(c, w)| ((*c).clone(), w / total))
                .collect();
            let mut p = [0.0; 2];
            for (c, w) in &mix {
                let a = planar[c];
                p[0] += w * a[0];
                p[1] += w * a[1];
            }
            planar.insert(t.clone(), p);
            trigger_mixtures.insert(t.clone(), mix);
        }
        let basis = Normal::new(0.0, 1.0 / (params.embedding_dim as f64).sqrt()).expect("valid normal");
        let lift: Vec<[f64; 2]> = (0..params.embedding_dim)
            .map(|_| [basis.sample(rng), basis.sample(rng)])
            .collect();
        let rows = all_classes
            .iter()
            .map(|c| {
                let p = planar[c];
                let v = lift.iter().map(|l| l[0] * p[0] + l[1] * p[1]).collect();
                (c.clone(), v)
            })
            .collect();
        let embeddings = EmbeddingTable::new(params.embedding_dim, rows)?;
        // Round the mixture certificate through the table's text form so the
        // stored weights describe the vectors actually written.
        let embeddings = EmbeddingTable::read(embeddings.to_text().as_bytes())?;

        let width = all_classes.len() + 5;
        let enc = Normal::new(0.0, 1.0 / (width as f64).sqrt()).expect("valid normal");
        let encoder = (0..params.visual_dim)
            .map(|_| (0..width).map(|_| enc.sample(rng)).collect())
            .collect();

        Ok(Self {
            params: params.clone(),
            vocab: Vocabulary::new(actions, all_classes),
            rules: RuleTable {
                overlap_iou: OVERLAP_IOU,
                pair_rules,
                context_rules,
                trigger_mixtures,
            },
            embeddings,
            encoder,
            object_classes,
            context_classes,
        })
    }

    fn class_index(&self, class: &str) -> usize {
        self.vocab
            .objects()
            .iter()
            .position(|c| c == class)
            .expect("class from the world vocabulary")
    }

    fn visual_feature<R: Rng + ?Sized>(&self, class: &str, b: &BoundingBox, rng: &mut R) -> Vec<f64> {
        let n = self.vocab.objects().len();
        let mut x = vec![0.0; n + 5];
        x[self.class_index(class)] = 1.0;
        x[n] = b.x1 / IMAGE_W;
        x[n + 1] = b.y1 / IMAGE_H;
        x[n + 2] = b.x2 / IMAGE_W;
        x[n + 3] = b.y2 / IMAGE_H;
        x[n + 4] = b.area() / (IMAGE_W * IMAGE_H);
        let noise = Normal::new(0.0, self.params.feature_noise.max(f64::MIN_POSITIVE)).expect("valid normal");
        self.encoder
            .iter()
            .map(|row| {
                let v: f64 = row.iter().zip(&x).map(|(a, b)| a * b).sum();
                if self.params.feature_noise > 0.0 {
                    v + noise.sample(rng)
                } else {
                    v
                }
            })
            .collect()
    }

    fn object_classes_for_scene<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<String> {
        let n_objects = rng.random_range(2..=4);
        let non_context: Vec<&String> = self
            .object_classes
            .iter()
            .filter(|c| !self.context_classes.contains(c))
            .collect();
        if self.context_classes.is_empty() || rng.random_bool(0.5) {
            return (0..n_objects)
                .map(|_| (*non_context.choose(rng).expect("non-empty")).clone())
                .collect();
        }
        // One context object per context scene; its trigger's presence is a
        // fair coin so both labels occur equally often.
        let c = self.context_classes.choose(rng).expect("non-empty").clone();
        let trigger = &self.rules.context_rule(&c).expect("rule per context class").trigger;
        let want_trigger = rng.random_bool(0.5);
        let others: Vec<&String> = non_context
            .iter()
            .copied()
            .filter(|o| want_trigger || *o != trigger)
            .collect();
        let mut classes = vec![c];
        for _ in 1..n_objects {
            if let Some(o) = others.choose(rng) {
                classes.push((*o).clone());
            }
        }
        if want_trigger && !classes.contains(trigger) {
            if classes.len() > 1 {
                let slot = rng.random_range(1..classes.len());
                classes[slot] = trigger.clone();
            } else {
                classes.push(trigger.clone());
            }
        }
        classes
    }

    /// Draws one scene. Labels come from [`RuleTable::label`] on the exact
    /// (un-jittered) boxes.
    pub fn sample_scene<R: Rng + ?Sized>(&self, image_id: &str, rng: &mut R) -> SceneFixture {
        let n_humans = rng.random_range(1..=2);
        let humans: Vec<BoundingBox> = (0..n_humans).map(|_| random_human(rng)).collect();
        let classes = self.object_classes_for_scene(rng);
        let objects: Vec<BoundingBox> = classes
            .iter()
            .map(|_| {
                let anchor = humans[rng.random_range(0..humans.len())];
                place_object(&anchor, *SpatialBucket::ALL.choose(rng).expect("non-empty"), rng)
            })
            .collect();

        let present: Vec<&str> = classes.iter().map(String::as_str).collect();
        let mut gt_hois = Vec::new();
        for h in &humans {
            for (class, o) in classes.iter().zip(&objects) {
                let action = self
                    .rules
                    .label(class, spatial_bucket(h, o), &present)
                    .expect("every class has a rule");
                gt_hois.push(GtHoi {
                    human_box: *h,
                    object_box: *o,
                    object_class: class.clone(),
                    action: action.to_string(),
                });
            }
        }

        let mut detections = Vec::new();
        for h in &humans {
            let b = jitter(h, self.params.box_jitter, rng);
            detections.push(Detection {
                bbox: b,
                class: HUMAN_CLASS.into(),
                score: score_above(0.8, rng),
                feature: self.visual_feature(HUMAN_CLASS, &b, rng),
            });
        }
        for (class, o) in classes.iter().zip(&objects) {
            let b = jitter(o, self.params.box_jitter, rng);
            detections.push(Detection {
                bbox: b,
                class: class.clone(),
                score: score_above(0.3, rng),
                feature: self.visual_feature(class, &b, rng),
            });
        }
        SceneFixture {
            image_id: image_id.to_string(),
            width: IMAGE_W,
            height: IMAGE_H,
            detections,
            gt_hois,
        }
    }
}

/// Uniform in `(lo, 1]`.
fn score_above<R: Rng + ?Sized>(lo: f64, rng: &mut R) -> f64 {
    1.0 - (1.0 - lo) * rng.random::<f64>()
}

fn random_human<R: Rng + ?Sized>(rng: &mut R) -> BoundingBox {
    let w = rng.random_range(60.0..120.0);
    let h = rng.random_range(120.0..240.0);
    let x = rng.random_range(0.0..IMAGE_W - w);
    let y = rng.random_range(0.0..IMAGE_H - h);
    BoundingBox::new(x, y, x + w, y + h)
}

fn fit_inside(mut x1: f64, mut y1: f64, w: f64, h: f64) -> BoundingBox {
    x1 = x1.clamp(0.0, IMAGE_W - w);
    y1 = y1.clamp(0.0, IMAGE_H - h);
    BoundingBox::new(x1, y1, x1 + w, y1 + h)
}

fn place_object<R: Rng + ?Sized>(human: &BoundingBox, bucket: SpatialBucket, rng: &mut R) -> BoundingBox {
    let (cx, cy) = human.center();
    if bucket == SpatialBucket::Overlap {
        let s = rng.random_range(0.8..1.0);
        let (w, h) = (human.width() * s, human.height() * s);
        let x = cx - w / 2.0 + rng.random_range(-0.05..0.05) * w;
        let y = cy - h / 2.0 + rng.random_range(-0.05..0.05) * h;
        return fit_inside(x, y, w, h);
    }
    let w = rng.random_range(30.0..90.0);
    let h = rng.random_range(30.0..90.0);
    let gap = rng.random_range(2.0..20.0);
    let shift = rng.random_range(-0.25..0.25);
    match bucket {
        SpatialBucket::Above => fit_inside(cx - w / 2.0 + shift * human.width(), human.y1 - gap - h, w, h),
        SpatialBucket::Below => fit_inside(cx - w / 2.0 + shift * human.width(), human.y2 + gap, w, h),
        _ => {
            let x = if rng.random_bool(0.5) {
                human.x2 + gap
            } else {
                human.x1 - gap - w
            };
            fit_inside(x, cy - h / 2.0 + shift * human.height(), w, h)
        }
    }
}

fn jitter<R: Rng + ?Sized>(b: &BoundingBox, amount: f64, rng: &mut R) -> BoundingBox {
    if amount == 0.0 {
        return *b;
    }
    let mut d = || rng.random_range(-amount..=amount);
    let x1 = (b.x1 + d()).clamp(0.0, IMAGE_W - 1.0);
    let y1 = (b.y1 + d()).clamp(0.0, IMAGE_H - 1.0);
    let x2 = (b.x2 + d()).clamp(x1 + 1.0, IMAGE_W);
    let y2 = (b.y2 + d()).clamp(y1 + 1.0, IMAGE_H);
    BoundingBox::new(x1, y1, x2, y2)
}

/// Writes a complete dataset directory: scenes, embedding table, rule table
/// and manifest. Output depends only on `(seed, params)`.
pub fn generate_synthetic(
    seed: u64,
    params: &SyntheticParams,
    out: &Path,
) -> Result<DatasetManifest, DataError> {
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let world = SyntheticWorld::new(params, &mut rng)?;
    let digits = params.n_scenes.saturating_sub(1).to_string().len().max(5);
    let scene_dir = out.join(SCENE_DIR);
    if scene_dir.is_dir() {
        for f in super::list_scene_files(out)? {
            std::fs::remove_file(out.join(&f)).map_err(|e| DataError::Io {
                path: f.clone(),
                message: e.to_string(),
            })?;
        }
    }
    for i in 0..params.n_scenes {
        let id = format!("scene_{i:0digits$}");
        let scene = world.sample_scene(&id, &mut rng);
        let text = serde_json::to_string_pretty(&scene).expect("scene serializes");
        write_file(&scene_dir.join(format!("{id}.json")), text.as_bytes())?;
    }
    write_file(&out.join(EMBEDDINGS_FILE), world.embeddings.to_text().as_bytes())?;
    let rules = serde_json::to_string_pretty(&world.rules).expect("rules serialize");
    write_file(&out.join(RULES_FILE), rules.as_bytes())?;
    let manifest = build_manifest(out, params.train_fraction, seed, Some(&world.vocab))?;
    manifest.save(&out.join(MANIFEST_FILE))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SyntheticParams {
        SyntheticParams {
            n_scenes: 12,
            embedding_dim: 8,
            ..SyntheticParams::default()
        }
    }

    #[test]
    fn invalid_parameters_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        for p in [
            SyntheticParams { n_scenes: 0, ..small() },
            SyntheticParams { n_actions: 1, ..small() },
            SyntheticParams { context_fraction: 1.0, ..small() },
            SyntheticParams { context_fraction: -0.1, ..small() },
        ] {
            assert!(matches!(
                generate_synthetic(1, &p, dir.path()),
                Err(DataError::InvalidParameter { .. })
            ));
        }
    }

    #[test]
    fn buckets_follow_cutoffs() {
        let h = BoundingBox::new(100.0, 100.0, 200.0, 300.0);
        assert_eq!(spatial_bucket(&h, &h), SpatialBucket::Overlap);
        assert_eq!(spatial_bucket(&h, &BoundingBox::new(120.0, 20.0, 180.0, 80.0)), SpatialBucket::Above);
        assert_eq!(spatial_bucket(&h, &BoundingBox::new(120.0, 320.0, 180.0, 380.0)), SpatialBucket::Below);
        assert_eq!(spatial_bucket(&h, &BoundingBox::new(220.0, 170.0, 280.0, 230.0)), SpatialBucket::Beside);
    }

    #[test]
    fn scenes_satisfy_fixture_invariants() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let world = SyntheticWorld::new(&small(), &mut rng).unwrap();
        for i in 0..200 {
            let mut s = world.sample_scene(&format!("s{i}"), &mut rng);
            s.validate(&world.vocab).unwrap();
            let humans = s.human_count();
            let objects = s.detections.len() - humans;
            assert!((1..=2).contains(&humans));
            assert!((1..=4).contains(&objects));
            assert_eq!(s.gt_hois.len(), humans * objects);
            assert!(s.detections.iter().all(|d| if d.is_human() { d.score > 0.8 } else { d.score > 0.3 }));
            assert_eq!(super::super::filter_detections(&s), s);
            for (d, gt) in s.detections[humans..].iter().zip(&s.gt_hois) {
                assert!(iou(&d.bbox, &gt.object_box) > 0.5);
            }
        }
    }

    #[test]
    fn context_label_flips_without_trigger() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let world = SyntheticWorld::new(&small(), &mut rng).unwrap();
        let rule = &world.rules.context_rules[0];
        let with = world.rules.label(&rule.class, SpatialBucket::Beside, &[&rule.class, &rule.trigger]);
        let without = world.rules.label(&rule.class, SpatialBucket::Beside, &[&rule.class]);
        assert_eq!(with, Some(rule.present_action.as_str()));
        assert_eq!(without, Some(rule.absent_action.as_str()));
        assert_ne!(with, without);
    }
}
