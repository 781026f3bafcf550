//! Replays the planted rules of generated datasets with a separate evaluator
//! that reads the raw JSON files.

use std::collections::BTreeMap;
use std::path::Path;

use serde_json::Value;

use vsgat::data::synthetic::{generate_synthetic, SyntheticParams};

fn read(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn boxes(v: &Value) -> [f64; 4] {
    let a = v.as_array().unwrap();
    [0, 1, 2, 3].map(|i| a[i].as_f64().unwrap())
}

fn overlap(a: [f64; 4], b: [f64; 4]) -> f64 {
    let w = (a[2].min(b[2]) - a[0].max(b[0])).max(0.0);
    let h = (a[3].min(b[3]) - a[1].max(b[1])).max(0.0);
    let inter = w * h;
    let area = |r: [f64; 4]| (r[2] - r[0]) * (r[3] - r[1]);
    inter / (area(a) + area(b) - inter)
}

fn bucket(rules: &Value, h: [f64; 4], o: [f64; 4]) -> &'static str {
    if overlap(h, o) > rules["overlap_iou"].as_f64().unwrap() {
        return "overlap";
    }
    let dx = (o[0] + o[2]) / 2.0 - (h[0] + h[2]) / 2.0;
    let dy = (o[1] + o[3]) / 2.0 - (h[1] + h[3]) / 2.0;
    match (dy.abs() > dx.abs(), dy < 0.0) {
        (true, true) => "above",
        (true, false) => "below",
        _ => "beside",
    }
}

/// Expected action for one human-object pair of a raw scene.
fn expected_action(rules: &Value, scene_classes: &[String], class: &str, h: [f64; 4], o: [f64; 4]) -> String {
    for r in rules["context_rules"].as_array().unwrap() {
        if r["class"] == class {
            let trigger = r["trigger"].as_str().unwrap();
            let key = if scene_classes.iter().any(|c| c == trigger) {
                "present_action"
            } else {
                "absent_action"
            };
            return r[key].as_str().unwrap().to_string();
        }
    }
    rules["pair_rules"][class][bucket(rules, h, o)].as_str().unwrap().to_string()
}

fn object_classes(scene: &Value) -> Vec<String> {
    scene["detections"]
        .as_array()
        .unwrap()
        .iter()
        .map(|d| d["class"].as_str().unwrap().to_string())
        .filter(|c| c != "person")
        .collect()
}

fn generate(dir: &Path, fraction: f64, seed: u64) -> Value {
    let p = SyntheticParams {
        n_scenes: 60,
        context_fraction: fraction,
        embedding_dim: 8,
        ..SyntheticParams::default()
    };
    generate_synthetic(seed, &p, dir).unwrap();
    read(&dir.join("rules.json"))
}

fn scene_files(dir: &Path, manifest: &Value, key: &str) -> Vec<Value> {
    manifest[key]
        .as_array()
        .unwrap()
        .iter()
        .map(|f| read(&dir.join(f.as_str().unwrap())))
        .collect()
}

#[test]
fn labels_replay_from_the_rule_table() {
    for (fraction, seed) in [(0.0, 1), (0.5, 2), (0.34, 3)] {
        let t = tempfile::tempdir().unwrap();
        let rules = generate(t.path(), fraction, seed);
        if fraction == 0.0 {
            assert!(rules["context_rules"].as_array().unwrap().is_empty());
        }
        let manifest = read(&t.path().join("manifest.json"));
        let mut checked = 0;
        for key in ["train_scenes", "val_scenes"] {
            for scene in scene_files(t.path(), &manifest, key) {
                let classes = object_classes(&scene);
                for g in scene["gt_hois"].as_array().unwrap() {
                    let class = g["object_class"].as_str().unwrap();
                    let want =
                        expected_action(&rules, &classes, class, boxes(&g["human_box"]), boxes(&g["object_box"]));
                    assert_eq!(g["action"].as_str().unwrap(), want, "{}", scene["image_id"]);
                    checked += 1;
                }
            }
        }
        assert!(checked > 100);
    }
}

#[test]
fn removing_the_trigger_flips_context_labels() {
    let t = tempfile::tempdir().unwrap();
    let rules = generate(t.path(), 0.5, 4);
    let manifest = read(&t.path().join("manifest.json"));
    let mut flips = 0;
    for scene in scene_files(t.path(), &manifest, "train_scenes") {
        let classes = object_classes(&scene);
        for r in rules["context_rules"].as_array().unwrap() {
            let (class, trigger) = (r["class"].as_str().unwrap(), r["trigger"].as_str().unwrap());
            if !(classes.iter().any(|c| c == class) && classes.iter().any(|c| c == trigger)) {
                continue;
            }
            let without: Vec<String> = classes.iter().filter(|c| *c != trigger).cloned().collect();
            for g in scene["gt_hois"].as_array().unwrap().iter().filter(|g| g["object_class"] == class) {
                let (h, o) = (boxes(&g["human_box"]), boxes(&g["object_box"]));
                assert_eq!(g["action"], r["present_action"]);
                let after = expected_action(&rules, &without, class, h, o);
                assert_eq!(after, r["absent_action"].as_str().unwrap());
                assert_ne!(after, g["action"].as_str().unwrap());
                flips += 1;
            }
        }
    }
    assert!(flips > 0, "no scene held a context object next to its trigger");
}

#[test]
fn manifest_counts_match_a_recount() {
    let t = tempfile::tempdir().unwrap();
    generate(t.path(), 0.5, 5);
    let manifest = read(&t.path().join("manifest.json"));
    let mut recount: BTreeMap<(String, String), usize> = BTreeMap::new();
    for key in ["train_scenes", "val_scenes"] {
        for scene in scene_files(t.path(), &manifest, key) {
            for g in scene["gt_hois"].as_array().unwrap() {
                let k = (g["action"].as_str().unwrap().into(), g["object_class"].as_str().unwrap().into());
                *recount.entry(k).or_insert(0) += usize::from(key == "train_scenes");
            }
        }
    }
    let listed: BTreeMap<(String, String), usize> = manifest["hoi_counts"]
        .as_array()
        .unwrap()
        .iter()
        .map(|c| {
            (
                (c["action"].as_str().unwrap().into(), c["object"].as_str().unwrap().into()),
                c["count"].as_u64().unwrap() as usize,
            )
        })
        .collect();
    assert_eq!(listed, recount);
}
