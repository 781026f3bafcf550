use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{DataError, Vocabulary};
use crate::features::{BoundingBox, ImageMeta};

/// Class label that marks a detection as a human.
pub const HUMAN_CLASS: &str = "person";
/// Humans are kept when their score strictly exceeds this.
pub const HUMAN_SCORE_THRESHOLD: f64 = 0.8;
/// Non-human detections are kept when their score strictly exceeds this.
pub const OBJECT_SCORE_THRESHOLD: f64 = 0.3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    #[serde(rename = "box")]
    pub bbox: BoundingBox,
    pub class: String,
    pub score: f64,
    pub feature: Vec<f64>,
}

impl Detection {
    pub fn is_human(&self) -> bool {
        self.class == HUMAN_CLASS
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GtHoi {
    pub human_box: BoundingBox,
    pub object_box: BoundingBox,
    pub object_class: String,
    pub action: String,
}

/// One image: detections plus ground-truth interaction triplets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneFixture {
    pub image_id: String,
    pub width: f64,
    pub height: f64,
    pub detections: Vec<Detection>,
    pub gt_hois: Vec<GtHoi>,
}

impl SceneFixture {
    pub fn image(&self) -> Result<ImageMeta, DataError> {
        ImageMeta::new(self.width, self.height).map_err(|e| DataError::Invalid {
            source_name: self.image_id.clone(),
            field: "width/height".into(),
            message: e.to_string(),
        })
    }

    /// Checks every fixture invariant and clamps slightly-out-of-image boxes
    /// in place.
    pub fn validate(&mut self, vocab: &Vocabulary) -> Result<(), DataError> {
        let img = self.image()?;
        let id = self.image_id.clone();
        let invalid = |field: String, message: String| DataError::Invalid {
            source_name: id.clone(),
            field,
            message,
        };
        let feature_len = self.detections.first().map(|d| d.feature.len());
        for (i, det) in self.detections.iter_mut().enumerate() {
            det.bbox = det
                .bbox
                .clamped_to(&img)
                .map_err(|e| invalid(format!("detections[{i}].box"), e.to_string()))?;
            if !(det.score > 0.0 && det.score <= 1.0) {
                return Err(invalid(
                    format!("detections[{i}].score"),
                    format!("score {} outside (0, 1]", det.score),
                ));
            }
            if !vocab.has_object(&det.class) {
                return Err(invalid(
                    format!("detections[{i}].class"),
                    format!("class `{}` not in the object vocabulary", det.class),
                ));
            }
            if Some(det.feature.len()) != feature_len || det.feature.is_empty() {
                return Err(invalid(
                    format!("detections[{i}].feature"),
                    format!("feature length {} differs from {:?}", det.feature.len(), feature_len),
                ));
            }
            if det.feature.iter().any(|v| !v.is_finite()) {
                return Err(invalid(format!("detections[{i}].feature"), "non-finite value".into()));
            }
        }
        for (i, gt) in self.gt_hois.iter_mut().enumerate() {
            gt.human_box = gt
                .human_box
                .clamped_to(&img)
                .map_err(|e| invalid(format!("gt_hois[{i}].human_box"), e.to_string()))?;
            gt.object_box = gt
                .object_box
                .clamped_to(&img)
                .map_err(|e| invalid(format!("gt_hois[{i}].object_box"), e.to_string()))?;
            if vocab.action_index(&gt.action).is_none() {
                return Err(invalid(
                    format!("gt_hois[{i}].action"),
                    format!("action `{}` not in the action vocabulary", gt.action),
                ));
            }
            if !vocab.has_object(&gt.object_class) {
                return Err(invalid(
                    format!("gt_hois[{i}].object_class"),
                    format!("class `{}` not in the object vocabulary", gt.object_class),
                ));
            }
        }
        Ok(())
    }

    pub fn human_count(&self) -> usize {
        self.detections.iter().filter(|d| d.is_human()).count()
    }
}

pub fn parse_scene(text: &str, source_name: &str, vocab: &Vocabulary) -> Result<SceneFixture, DataError> {
    let mut scene: SceneFixture = serde_json::from_str(text).map_err(|e| DataError::Parse {
        source_name: source_name.to_string(),
        line: e.line(),
        message: e.to_string(),
    })?;
    scene.validate(vocab)?;
    Ok(scene)
}

pub fn load_scene(path: &Path, vocab: &Vocabulary) -> Result<SceneFixture, DataError> {
    let text = std::fs::read_to_string(path).map_err(|e| DataError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    parse_scene(&text, &path.display().to_string(), vocab)
}

/// Keeps humans scoring above 0.8 and other detections above 0.3.
pub fn filter_detections(fixture: &SceneFixture) -> SceneFixture {
    let mut out = fixture.clone();
    out.detections.retain(|d| {
        if d.is_human() {
            d.score > HUMAN_SCORE_THRESHOLD
        } else {
            d.score > OBJECT_SCORE_THRESHOLD
        }
    });
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn vocab() -> Vocabulary {
        Vocabulary::new(
            vec!["hold".into(), "ride".into()],
            vec![HUMAN_CLASS.into(), "bike".into()],
        )
    }

    const MINIMAL: &str = r#"{
        "image_id": "img0", "width": 100, "height": 80,
        "detections": [
            {"box": [10, 10, 40, 70], "class": "person", "score": 0.95, "feature": [0.1, 0.2]},
            {"box": [30, 40, 90, 80.3], "class": "bike", "score": 0.6, "feature": [0.3, 0.4]}
        ],
        "gt_hois": [
            {"human_box": [10, 10, 40, 70], "object_box": [30, 40, 90, 80], "object_class": "bike", "action": "ride"}
        ]
    }"#;

    #[test]
    fn minimal_scene_loads_and_clamps() {
        let s = parse_scene(MINIMAL, "t", &vocab()).unwrap();
        assert_eq!(s.detections.len(), 2);
        assert_eq!(s.detections[1].bbox.y2, 80.0);
        assert_eq!(s.human_count(), 1);
    }

    #[test]
    fn invalid_score_rejected() {
        let text = MINIMAL.replace("0.95", "1.5");
        let err = parse_scene(&text, "t", &vocab()).unwrap_err();
        assert!(err.to_string().contains("detections[0].score"), "{err}");
    }

    #[test]
    fn unknown_action_names_label() {
        let text = MINIMAL.replace("\"ride\"", "\"eat\"");
        let err = parse_scene(&text, "t", &vocab()).unwrap_err();
        assert!(err.to_string().contains("`eat`"), "{err}");
        let text = MINIMAL.replace("\"bike\", \"score\"", "\"car\", \"score\"");
        assert!(parse_scene(&text, "t", &vocab()).is_err());
    }

    #[test]
    fn parse_error_carries_line() {
        let err = parse_scene("{\n\"image_id\": \"x\",\n oops }", "f.json", &vocab()).unwrap_err();
        match err {
            DataError::Parse { line, .. } => assert_eq!(line, 3),
            other => panic!("{other}"),
        }
    }

    fn det(class: &str, score: f64) -> Detection {
        Detection {
            bbox: BoundingBox::new(0.0, 0.0, 1.0, 1.0),
            class: class.into(),
            score,
            feature: vec![0.0],
        }
    }

    fn with(dets: Vec<Detection>) -> SceneFixture {
        SceneFixture {
            image_id: "s".into(),
            width: 10.0,
            height: 10.0,
            detections: dets,
            gt_hois: vec![],
        }
    }

    #[test]
    fn thresholds_are_strict() {
        let s = with(vec![
            det(HUMAN_CLASS, 0.85),
            det(HUMAN_CLASS, 0.80),
            det("bike", 0.31),
            det("bike", 0.30),
        ]);
        let kept: Vec<f64> = filter_detections(&s).detections.iter().map(|d| d.score).collect();
        assert_eq!(kept, vec![0.85, 0.31]);
        assert!(filter_detections(&with(vec![])).detections.is_empty());
    }

    proptest! {
        #[test]
        fn filter_is_idempotent(scores in proptest::collection::vec((0.0f64..1.0, any::<bool>()), 0..12)) {
            let s = with(scores.iter().map(|&(sc, h)| det(if h { HUMAN_CLASS } else { "bike" }, sc)).collect());
            let once = filter_detections(&s);
            prop_assert_eq!(filter_detections(&once), once);
        }
    }
}
