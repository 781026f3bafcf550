//! HOI detection scoring: IoU, greedy triplet matching, all-point average
//! precision, Full/Rare/Non-Rare mAP, and per-verb AP spread.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::data::{GtHoi, HoiCategory, SceneFixture};
use crate::features::BoundingBox;
use crate::graphnet::HoiPrediction;

pub const DEFAULT_IOU_THRESHOLD: f64 = 0.5;
/// Categories with fewer training instances than this form the Rare split.
pub const RARE_THRESHOLD: usize = 10;

pub fn iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let iw = (a.x2.min(b.x2) - a.x1.max(b.x1)).max(0.0);
    let ih = (a.y2.min(b.y2) - a.y1.max(b.y1)).max(0.0);
    let inter = iw * ih;
    if inter == 0.0 {
        return 0.0;
    }
    inter / (a.area() + b.area() - inter)
}

/// One scored triplet `⟨human, action, object⟩` from one scene.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredTriplet {
    pub scene: String,
    pub human_box: BoundingBox,
    pub object_box: BoundingBox,
    pub category: HoiCategory,
    pub score: f64,
}

/// A ground-truth triplet tagged with its scene.
#[derive(Debug, Clone, PartialEq)]
pub struct GtTriplet {
    pub scene: String,
    pub human_box: BoundingBox,
    pub object_box: BoundingBox,
    pub category: HoiCategory,
}

/// Expands model predictions into one triplet per action, scored by `S_R`.
pub fn triplets_from_predictions(
    scene: &str,
    predictions: &[HoiPrediction],
    actions: &[String],
) -> Vec<ScoredTriplet> {
    let mut out = Vec::with_capacity(predictions.len() * actions.len());
    for p in predictions {
        for (a, &score) in actions.iter().zip(&p.triplet_scores) {
            out.push(ScoredTriplet {
                scene: scene.to_string(),
                human_box: p.human_box,
                object_box: p.object_box,
                category: HoiCategory::new(a, &p.object_class),
                score,
            });
        }
    }
    out
}

pub fn gt_triplets(scene: &SceneFixture) -> Vec<GtTriplet> {
    scene.gt_hois.iter().map(|g| gt_triplet(&scene.image_id, g)).collect()
}

fn gt_triplet(scene: &str, g: &GtHoi) -> GtTriplet {
    GtTriplet {
        scene: scene.to_string(),
        human_box: g.human_box,
        object_box: g.object_box,
        category: HoiCategory::new(&g.action, &g.object_class),
    }
}

/// Ranked TP/FP outcomes for one category.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CategoryMatch {
    /// `(score, is_tp)` in ranking order.
    pub ranked: Vec<(f64, bool)>,
    pub gt_count: usize,
}

pub type MatchResult = BTreeMap<HoiCategory, CategoryMatch>;

fn cmp_box(a: &BoundingBox, b: &BoundingBox) -> Ordering {
    a.to_array()
        .iter()
        .zip(b.to_array().iter())
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| o.is_ne())
        .unwrap_or(Ordering::Equal)
}

/// Ranking order: score descending, then scene id, human box, object box.
pub fn ranking_order(a: &ScoredTriplet, b: &ScoredTriplet) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then_with(|| a.scene.cmp(&b.scene))
        .then_with(|| cmp_box(&a.human_box, &b.human_box))
        .then_with(|| cmp_box(&a.object_box, &b.object_box))
}

/// Greedy matching per category. A prediction is a true positive when an
/// unmatched ground truth of its category in the same scene has both IoUs
/// strictly above `threshold`; among those it consumes the one with the
/// highest `min(IoU_h, IoU_o)`.
pub fn match_predictions(predictions: &[ScoredTriplet], gt: &[GtTriplet], threshold: f64) -> MatchResult {
    let mut result: MatchResult = BTreeMap::new();
    let mut gt_by_cat: BTreeMap<&HoiCategory, Vec<&GtTriplet>> = BTreeMap::new();
    for g in gt {
        gt_by_cat.entry(&g.category).or_default().push(g);
        result.entry(g.category.clone()).or_default().gt_count += 1;
    }
    let mut by_cat: BTreeMap<&HoiCategory, Vec<&ScoredTriplet>> = BTreeMap::new();
    for p in predictions {
        by_cat.entry(&p.category).or_default().push(p);
    }
    for (cat, mut preds) in by_cat {
        preds.sort_by(|a, b| ranking_order(a, b));
        let gts = gt_by_cat.get(cat).map(Vec::as_slice).unwrap_or(&[]);
        let mut used = vec![false; gts.len()];
        let entry = result.entry(cat.clone()).or_default();
        for p in preds {
            let mut best: Option<(usize, f64)> = None;
            for (k, g) in gts.iter().enumerate() {
                if used[k] || g.scene != p.scene {
                    continue;
                }
                let ih = iou(&p.human_box, &g.human_box);
                let io = iou(&p.object_box, &g.object_box);
                if ih > threshold && io > threshold {
                    let m = ih.min(io);
                    if best.is_none_or(|(_, b)| m > b) {
                        best = Some((k, m));
                    }
                }
            }
            if let Some((k, _)) = best {
                used[k] = true;
            }
            entry.ranked.push((p.score, best.is_some()));
        }
    }
    result
}

/// All-point AP: the sum of precision at each true-positive rank divided by
/// the ground-truth count. `None` for a category without ground truth.
pub fn average_precision(m: &CategoryMatch) -> Option<f64> {
    if m.gt_count == 0 {
        return None;
    }
    let mut tp = 0usize;
    let mut sum = 0.0;
    for (k, &(_, hit)) in m.ranked.iter().enumerate() {
        if hit {
            tp += 1;
            sum += tp as f64 / (k + 1) as f64;
        }
    }
    Some(sum / m.gt_count as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CategoryAp {
    pub category: HoiCategory,
    pub gt_count: usize,
    pub train_count: usize,
    pub ap: f64,
}

/// AP range and quartiles across the objects sharing one verb.
#[derive(Debug, Clone, PartialEq)]
pub struct VerbSpread {
    pub verb: String,
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ApReport {
    pub categories: Vec<CategoryAp>,
    pub map_full: f64,
    pub map_rare: f64,
    pub map_nonrare: f64,
    pub spread: Vec<VerbSpread>,
}

fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        f64::NAN
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}

/// Linear-interpolation quantile of sorted data.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Split means over every category with ground truth. Categories missing
/// from `train_counts` count as having zero training instances.
pub fn mean_ap(result: &MatchResult, train_counts: &BTreeMap<HoiCategory, usize>) -> ApReport {
    let categories: Vec<CategoryAp> = result
        .iter()
        .filter_map(|(cat, m)| {
            average_precision(m).map(|ap| CategoryAp {
                category: cat.clone(),
                gt_count: m.gt_count,
                train_count: train_counts.get(cat).copied().unwrap_or(0),
                ap,
            })
        })
        .collect();
    let all: Vec<f64> = categories.iter().map(|c| c.ap).collect();
    let rare: Vec<f64> = categories
        .iter()
        .filter(|c| c.train_count < RARE_THRESHOLD)
        .map(|c| c.ap)
        .collect();
    let nonrare: Vec<f64> = categories
        .iter()
        .filter(|c| c.train_count >= RARE_THRESHOLD)
        .map(|c| c.ap)
        .collect();
    let mut by_verb: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for c in &categories {
        by_verb.entry(&c.category.action).or_default().push(c.ap);
    }
    let spread = by_verb
        .into_iter()
        .map(|(verb, mut aps)| {
            aps.sort_by(f64::total_cmp);
            VerbSpread {
                verb: verb.to_string(),
                min: aps[0],
                q1: quantile(&aps, 0.25),
                median: quantile(&aps, 0.5),
                q3: quantile(&aps, 0.75),
                max: aps[aps.len() - 1],
            }
        })
        .collect();
    ApReport {
        map_full: mean(&all),
        map_rare: mean(&rare),
        map_nonrare: mean(&nonrare),
        categories,
        spread,
    }
}

impl ApReport {
    /// Mean AP over the listed categories that were evaluated.
    pub fn mean_over(&self, wanted: &[HoiCategory]) -> f64 {
        let aps: Vec<f64> = self
            .categories
            .iter()
            .filter(|c| wanted.contains(&c.category))
            .map(|c| c.ap)
            .collect();
        mean(&aps)
    }

    pub fn report_csv(&self) -> String {
        let mut s = String::from("category,verb,object,gt_count,train_count,ap\n");
        for c in &self.categories {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{}",
                c.category.name(),
                c.category.action,
                c.category.object,
                c.gt_count,
                c.train_count,
                c.ap
            );
        }
        for (name, v) in [
            ("mAP_full", self.map_full),
            ("mAP_rare", self.map_rare),
            ("mAP_nonrare", self.map_nonrare),
        ] {
            let _ = writeln!(s, "{name},,,,,{v}");
        }
        s
    }

    pub fn spread_csv(&self) -> String {
        let mut s = String::from("verb,min,q1,median,q3,max\n");
        for v in &self.spread {
            let _ = writeln!(s, "{},{},{},{},{},{}", v.verb, v.min, v.q1, v.median, v.q3, v.max);
        }
        s
    }
}
