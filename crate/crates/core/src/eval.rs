//! Fixed-AP evaluation: detections are pooled per class over the whole
//! dataset and capped there, with no per-image limit.

use std::collections::{BTreeMap, HashMap};

use crate::error::{Error, Result};
use crate::train::{iou, BoxCxcywh};

#[derive(Clone, Debug, PartialEq)]
pub struct EvalConfig {
    pub iou_thresholds: Vec<f64>,
    /// Dataset-wide number of detections kept per class.
    pub per_class_cap: usize,
    pub recall_points: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            iou_thresholds: (0..10).map(|i| (50 + 5 * i) as f64 / 100.0).collect(),
            per_class_cap: 10_000,
            recall_points: 101,
        }
    }
}

impl EvalConfig {
    pub fn with_cap(cap: usize) -> Self {
        Self { per_class_cap: cap, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.iou_thresholds.is_empty() {
            return Err(Error::Validation("no IoU thresholds".into()));
        }
        if !self.iou_thresholds.iter().all(|&t| t > 0.0 && t <= 1.0) {
            return Err(Error::Validation(format!("IoU thresholds {:?} must lie in (0, 1]", self.iou_thresholds)));
        }
        if !self.iou_thresholds.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::Validation("IoU thresholds must be strictly increasing".into()));
        }
        if self.recall_points < 2 {
            return Err(Error::Validation("need at least 2 recall points".into()));
        }
        Ok(())
    }
}

/// A box with a category name, normalized `cxcywh`.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledBox {
    pub category: String,
    pub bbox: BoxCxcywh,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScoredBox {
    pub category: String,
    pub score: f64,
    pub bbox: BoxCxcywh,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ImageGroundTruth {
    pub image_id: u64,
    pub boxes: Vec<LabeledBox>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ImageDetections {
    pub image_id: u64,
    pub detections: Vec<ScoredBox>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ApReport {
    /// AP averaged over thresholds, for every class present in the ground
    /// truth.
    pub per_class: BTreeMap<String, f64>,
    /// Mean over classes at each threshold.
    pub per_threshold: Vec<f64>,
    pub mean_ap: f64,
}

impl ApReport {
    pub fn at_threshold(&self, cfg: &EvalConfig, t: f64) -> Option<f64> {
        cfg.iou_thresholds.iter().position(|&x| (x - t).abs() < 1e-12).map(|i| self.per_threshold[i])
    }
}

struct Candidate {
    score: f64,
    image_id: u64,
    order: usize,
    bbox: BoxCxcywh,
}

/// Interpolated AP from a hit sequence in descending score order.
pub fn interpolated_ap(hits: &[bool], num_gt: usize, recall_points: usize) -> f64 {
    if num_gt == 0 {
        return 0.0;
    }
    let mut tp = 0usize;
    let mut recall = Vec::with_capacity(hits.len());
    let mut precision = Vec::with_capacity(hits.len());
    for (i, &h) in hits.iter().enumerate() {
        tp += h as usize;
        recall.push(tp as f64 / num_gt as f64);
        precision.push(tp as f64 / (i + 1) as f64);
    }
    for i in (0..precision.len().saturating_sub(1)).rev() {
        precision[i] = precision[i].max(precision[i + 1]);
    }
    let steps = (recall_points - 1) as f64;
    let mut sum = 0.0;
    for r in 0..recall_points {
        let level = r as f64 / steps;
        let idx = recall.partition_point(|&x| x < level - 1e-12);
        if idx < precision.len() {
            sum += precision[idx];
        }
    }
    sum / recall_points as f64
}

/// Per-class AP over `cfg.iou_thresholds`, then the mean over classes that
/// appear in the ground truth. Ties in score are broken by image id, then by
/// position in that image's detection list.
pub fn evaluate_fixed_ap(detections: &[ImageDetections], ground_truth: &[ImageGroundTruth], cfg: &EvalConfig) -> Result<ApReport> {
    cfg.validate()?;
    // class -> image -> boxes
    let mut gt: BTreeMap<&str, HashMap<u64, Vec<BoxCxcywh>>> = BTreeMap::new();
    let mut known = HashMap::new();
    for img in ground_truth {
        if known.insert(img.image_id, ()).is_some() {
            return Err(Error::Validation(format!("image id {} listed twice in ground truth", img.image_id)));
        }
        for b in &img.boxes {
            gt.entry(b.category.as_str()).or_default().entry(img.image_id).or_default().push(b.bbox);
        }
    }

    let mut pooled: HashMap<&str, Vec<Candidate>> = HashMap::new();
    let mut seen_per_image: HashMap<u64, usize> = HashMap::new();
    for img in detections {
        if !known.contains_key(&img.image_id) {
            return Err(Error::Validation(format!("detections reference unknown image id {}", img.image_id)));
        }
        let order = seen_per_image.entry(img.image_id).or_default();
        for d in &img.detections {
            if !d.score.is_finite() {
                return Err(Error::Validation(format!("non-finite score on image {}", img.image_id)));
            }
            if gt.contains_key(d.category.as_str()) {
                pooled.entry(d.category.as_str()).or_default().push(Candidate {
                    score: d.score,
                    image_id: img.image_id,
                    order: *order,
                    bbox: d.bbox,
                });
            }
            *order += 1;
        }
    }

    let nt = cfg.iou_thresholds.len();
    let mut per_class = BTreeMap::new();
    let mut per_threshold = vec![0.0; nt];
    for (&class, images) in &gt {
        let num_gt: usize = images.values().map(Vec::len).sum();
        let mut cands = pooled.remove(class).unwrap_or_default();
        cands.sort_by(|a, b| {
            b.score.total_cmp(&a.score).then(a.image_id.cmp(&b.image_id)).then(a.order.cmp(&b.order))
        });
        cands.truncate(cfg.per_class_cap);
        let mut class_sum = 0.0;
        for (ti, &thr) in cfg.iou_thresholds.iter().enumerate() {
            let mut claimed: HashMap<u64, Vec<bool>> = images.iter().map(|(&id, b)| (id, vec![false; b.len()])).collect();
            let hits: Vec<bool> = cands
                .iter()
                .map(|c| {
                    let (Some(boxes), Some(taken)) = (images.get(&c.image_id), claimed.get_mut(&c.image_id)) else {
                        return false;
                    };
                    let mut best: Option<(usize, f64)> = None;
                    for (g, b) in boxes.iter().enumerate() {
                        if taken[g] {
                            continue;
                        }
                        let v = iou(&c.bbox, b);
                        if v >= thr && best.is_none_or(|(_, bv)| v > bv) {
                            best = Some((g, v));
                        }
                    }
                    match best {
                        Some((g, _)) => {
                            taken[g] = true;
                            true
                        }
                        None => false,
                    }
                })
                .collect();
            let ap = interpolated_ap(&hits, num_gt, cfg.recall_points);
            per_threshold[ti] += ap;
            class_sum += ap;
        }
        per_class.insert(class.to_string(), class_sum / nt as f64);
    }
    let nc = per_class.len();
    let mean_ap = if nc == 0 { 0.0 } else { per_class.values().sum::<f64>() / nc as f64 };
    if nc > 0 {
        per_threshold.iter_mut().for_each(|v| *v /= nc as f64);
    }
    Ok(ApReport { per_class, per_threshold, mean_ap })
}
