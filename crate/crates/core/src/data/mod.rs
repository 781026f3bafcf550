//! Scene fixtures, detection filtering, dataset manifests, and the synthetic
//! scene generator.

mod fixture;
pub mod synthetic;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use fixture::{
    filter_detections, load_scene, parse_scene, Detection, GtHoi, SceneFixture, HUMAN_CLASS,
    HUMAN_SCORE_THRESHOLD, OBJECT_SCORE_THRESHOLD,
};

use crate::features::{EmbeddingTable, FeatureError};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const EMBEDDINGS_FILE: &str = "embeddings.txt";
pub const SCENE_DIR: &str = "scenes";

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("{source_name}:{line}: parse error: {message}")]
    Parse {
        source_name: String,
        line: usize,
        message: String,
    },
    #[error("{source_name}: invalid field `{field}`: {message}")]
    Invalid {
        source_name: String,
        field: String,
        message: String,
    },
    #[error("no scene files found in {0}")]
    EmptyDataset(String),
    #[error("invalid generator parameter `{name}`: {message}")]
    InvalidParameter { name: &'static str, message: String },
    #[error(transparent)]
    Feature(#[from] FeatureError),
}

/// Ordered action vocabulary (defines action indices) plus the object
/// vocabulary.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    actions: Vec<String>,
    objects: Vec<String>,
    action_index: HashMap<String, usize>,
}

impl Vocabulary {
    pub fn new(actions: Vec<String>, objects: Vec<String>) -> Self {
        let action_index = actions.iter().enumerate().map(|(i, a)| (a.clone(), i)).collect();
        Self {
            actions,
            objects,
            action_index,
        }
    }

    pub fn actions(&self) -> &[String] {
        &self.actions
    }

    pub fn objects(&self) -> &[String] {
        &self.objects
    }

    pub fn n_actions(&self) -> usize {
        self.actions.len()
    }

    pub fn action_index(&self, action: &str) -> Option<usize> {
        self.action_index.get(action).copied()
    }

    pub fn has_object(&self, class: &str) -> bool {
        self.objects.iter().any(|o| o == class)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct HoiCategory {
    pub action: String,
    pub object: String,
}

impl HoiCategory {
    pub fn new(action: impl Into<String>, object: impl Into<String>) -> Self {
        Self {
            action: action.into(),
            object: object.into(),
        }
    }

    pub fn name(&self) -> String {
        format!("{}:{}", self.action, self.object)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HoiCount {
    pub action: String,
    pub object: String,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub actions: Vec<String>,
    pub objects: Vec<String>,
    pub train_scenes: Vec<String>,
    pub val_scenes: Vec<String>,
    /// Training-split instance count for every HOI category that occurs
    /// anywhere in the dataset.
    pub hoi_counts: Vec<HoiCount>,
    #[serde(default = "default_embeddings")]
    pub embeddings: String,
    #[serde(default)]
    pub split_seed: u64,
}

fn default_embeddings() -> String {
    EMBEDDINGS_FILE.to_string()
}

impl DatasetManifest {
    pub fn vocabulary(&self) -> Vocabulary {
        Vocabulary::new(self.actions.clone(), self.objects.clone())
    }

    pub fn train_counts(&self) -> BTreeMap<HoiCategory, usize> {
        self.hoi_counts
            .iter()
            .map(|c| (HoiCategory::new(&c.action, &c.object), c.count))
            .collect()
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

    pub fn save(&self, path: &Path) -> Result<(), DataError> {
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        write_file(path, text.as_bytes())
    }
}

pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<(), DataError> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| DataError::Io {
            path: dir.display().to_string(),
            message: e.to_string(),
        })?;
    }
    std::fs::write(path, bytes).map_err(|e| DataError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

/// Lists `*.json` scene files under `dir/scenes` (or `dir` itself when it has
/// no `scenes` subdirectory), relative to `dir`, sorted.
pub fn list_scene_files(dir: &Path) -> Result<Vec<String>, DataError> {
    let scene_dir = if dir.join(SCENE_DIR).is_dir() {
        dir.join(SCENE_DIR)
    } else {
        dir.to_path_buf()
    };
    let entries = std::fs::read_dir(&scene_dir).map_err(|e| DataError::Io {
        path: scene_dir.display().to_string(),
        message: e.to_string(),
    })?;
    let mut files = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| DataError::Io {
            path: scene_dir.display().to_string(),
            message: e.to_string(),
        })?;
        let path = entry.path();
        let is_json = path.extension().is_some_and(|e| e == "json");
        if is_json && path.file_name().is_some_and(|n| n != MANIFEST_FILE) {
            let rel = path.strip_prefix(dir).unwrap_or(&path);
            files.push(rel.to_string_lossy().replace('\\', "/"));
        }
    }
    files.sort();
    Ok(files)
}

/// Builds the train/validation split and training-split HOI counts for the
/// scenes in `dir`. When `vocab` is `None` the vocabulary is the sorted set
/// of labels seen in the scenes.
pub fn build_manifest(
    dir: &Path,
    train_fraction: f64,
    seed: u64,
    vocab: Option<&Vocabulary>,
) -> Result<DatasetManifest, DataError> {
    if !(0.0..=1.0).contains(&train_fraction) {
        return Err(DataError::InvalidParameter {
            name: "train_fraction",
            message: format!("{train_fraction} outside [0, 1]"),
        });
    }
    let files = list_scene_files(dir)?;
    if files.is_empty() {
        return Err(DataError::EmptyDataset(dir.display().to_string()));
    }
    let vocab = match vocab {
        Some(v) => v.clone(),
        None => infer_vocabulary(dir, &files)?,
    };
    let mut scenes = Vec::with_capacity(files.len());
    for f in &files {
        scenes.push(load_scene(&dir.join(f), &vocab)?);
    }

    let mut order: Vec<usize> = (0..files.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = (files.len() as f64 * train_fraction).round() as usize;
    let (train_idx, val_idx) = order.split_at(n_train.min(files.len()));
    let mut train_idx = train_idx.to_vec();
    let mut val_idx = val_idx.to_vec();
    train_idx.sort_unstable();
    val_idx.sort_unstable();

    let mut counts: BTreeMap<HoiCategory, usize> = BTreeMap::new();
    for s in &scenes {
        for gt in &s.gt_hois {
            counts.entry(HoiCategory::new(&gt.action, &gt.object_class)).or_insert(0);
        }
    }
    for &i in &train_idx {
        for gt in &scenes[i].gt_hois {
            *counts
                .get_mut(&HoiCategory::new(&gt.action, &gt.object_class))
                .expect("category registered") += 1;
        }
    }

    Ok(DatasetManifest {
        actions: vocab.actions().to_vec(),
        objects: vocab.objects().to_vec(),
        train_scenes: train_idx.iter().map(|&i| files[i].clone()).collect(),
        val_scenes: val_idx.iter().map(|&i| files[i].clone()).collect(),
        hoi_counts: counts
            .into_iter()
            .map(|(c, count)| HoiCount {
                action: c.action,
                object: c.object,
                count,
            })
            .collect(),
        embeddings: EMBEDDINGS_FILE.to_string(),
        split_seed: seed,
    })
}

fn infer_vocabulary(dir: &Path, files: &[String]) -> Result<Vocabulary, DataError> {
    #[derive(Deserialize)]
    struct Labels {
        detections: Vec<ClassOnly>,
        gt_hois: Vec<GtLabels>,
    }
    #[derive(Deserialize)]
    struct ClassOnly {
        class: String,
    }
    #[derive(Deserialize)]
    struct GtLabels {
        object_class: String,
        action: String,
    }
    let mut actions = BTreeSet::new();
    let mut objects = BTreeSet::new();
    for f in files {
        let path = dir.join(f);
        let text = std::fs::read_to_string(&path).map_err(|e| DataError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        let labels: Labels = serde_json::from_str(&text).map_err(|e| DataError::Parse {
            source_name: path.display().to_string(),
            line: e.line(),
            message: e.to_string(),
        })?;
        objects.extend(labels.detections.into_iter().map(|d| d.class));
        for gt in labels.gt_hois {
            actions.insert(gt.action);
            objects.insert(gt.object_class);
        }
    }
    Ok(Vocabulary::new(actions.into_iter().collect(), objects.into_iter().collect()))
}

/// A dataset directory opened for training or evaluation.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub root: PathBuf,
    pub manifest: DatasetManifest,
    pub vocab: Vocabulary,
    pub embeddings: EmbeddingTable,
    pub train: Vec<SceneFixture>,
    pub val: Vec<SceneFixture>,
}

impl Dataset {
    pub fn open(root: &Path) -> Result<Self, DataError> {
        let manifest = DatasetManifest::load(&root.join(MANIFEST_FILE))?;
        let vocab = manifest.vocabulary();
        let embeddings = EmbeddingTable::load(&root.join(&manifest.embeddings))?;
        let load_all = |files: &[String]| -> Result<Vec<SceneFixture>, DataError> {
            files.iter().map(|f| load_scene(&root.join(f), &vocab)).collect()
        };
        let train = load_all(&manifest.train_scenes)?;
        let val = load_all(&manifest.val_scenes)?;
        Ok(Self {
            root: root.to_path_buf(),
            manifest,
            vocab,
            embeddings,
            train,
            val,
        })
    }

    pub fn visual_dim(&self) -> Option<usize> {
        self.train
            .iter()
            .chain(&self.val)
            .flat_map(|s| s.detections.first())
            .map(|d| d.feature.len())
            .next()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::BoundingBox;

    fn scene(id: usize, hois: &[(&str, &str)]) -> SceneFixture {
        let b = BoundingBox::new(1.0, 1.0, 5.0, 5.0);
        SceneFixture {
            image_id: format!("s{id}"),
            width: 10.0,
            height: 10.0,
            detections: vec![Detection {
                bbox: b,
                class: HUMAN_CLASS.into(),
                score: 0.9,
                feature: vec![0.0],
            }],
            gt_hois: hois
                .iter()
                .map(|(a, o)| GtHoi {
                    human_box: b,
                    object_box: b,
                    object_class: o.to_string(),
                    action: a.to_string(),
                })
                .collect(),
        }
    }

    fn write_scenes(dir: &Path, n: usize) -> Vec<SceneFixture> {
        let labels = [("hold", "cup"), ("ride", "bike"), ("hold", "bike")];
        let mut out = vec![];
        for i in 0..n {
            let hois: Vec<_> = (0..(i % 3) + 1).map(|k| labels[(i + k) % 3]).collect();
            let s = scene(i, &hois);
            let path = dir.join(SCENE_DIR).join(format!("scene_{i:04}.json"));
            write_file(&path, serde_json::to_string(&s).unwrap().as_bytes()).unwrap();
            out.push(s);
        }
        out
    }

    #[test]
    fn split_and_counts() {
        let dir = tempfile::tempdir().unwrap();
        let scenes = write_scenes(dir.path(), 10);
        let m = build_manifest(dir.path(), 0.8, 5, None).unwrap();
        assert_eq!(m.train_scenes.len(), 8);
        assert_eq!(m.val_scenes.len(), 2);
        assert_eq!(m.actions, vec!["hold", "ride"]);
        assert_eq!(m, build_manifest(dir.path(), 0.8, 5, None).unwrap());

        // brute-force recount over the training files
        let mut expected: BTreeMap<(String, String), usize> = BTreeMap::new();
        for s in &scenes {
            for gt in &s.gt_hois {
                expected.entry((gt.action.clone(), gt.object_class.clone())).or_insert(0);
            }
        }
        for f in &m.train_scenes {
            let idx: usize = f.trim_start_matches("scenes/scene_").trim_end_matches(".json").parse().unwrap();
            for gt in &scenes[idx].gt_hois {
                *expected.get_mut(&(gt.action.clone(), gt.object_class.clone())).unwrap() += 1;
            }
        }
        let got: BTreeMap<(String, String), usize> = m
            .hoi_counts
            .iter()
            .map(|c| ((c.action.clone(), c.object.clone()), c.count))
            .collect();
        assert_eq!(got, expected);
    }

    #[test]
    fn empty_directory_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            build_manifest(dir.path(), 0.8, 0, None),
            Err(DataError::EmptyDataset(_))
        ));
    }
}
