//! Set-prediction loss: sigmoid focal classification over phrases, L1 and
//! GIoU box terms on Hungarian-matched pairs. Everything runs in f64 and
//! comes with a hand-derived gradient.

use super::boxes::{giou_with_grad, BoxCxcywh};
use super::matching::{hungarian_match, MatchResult};
use crate::error::{dim_err, Error, Result};
use crate::tensor::Tensor;

/// Ground-truth boxes (normalized `cxcywh`) and their phrase indices.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct GroundTruth {
    pub boxes: Vec<BoxCxcywh>,
    pub labels: Vec<usize>,
}

impl GroundTruth {
    pub fn new(boxes: Vec<BoxCxcywh>, labels: Vec<usize>) -> Result<Self> {
        if boxes.len() != labels.len() {
            return dim_err(format!("{} boxes but {} labels", boxes.len(), labels.len()));
        }
        for b in &boxes {
            if !b.iter().all(|&v| v > 0.0 && v < 1.0) {
                return Err(Error::Validation(format!("ground-truth box {b:?} is outside (0,1)^4")));
            }
        }
        Ok(Self { boxes, labels })
    }

    pub fn len(&self) -> usize {
        self.boxes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.boxes.is_empty()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub cls: f64,
    pub l1: f64,
    pub giou: f64,
    pub focal_alpha: f64,
    pub focal_gamma: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { cls: 2.0, l1: 5.0, giou: 2.0, focal_alpha: 0.25, focal_gamma: 2.0 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossBreakdown {
    pub cls: f64,
    pub l1: f64,
    pub giou: f64,
    pub total: f64,
}

/// Loss value together with the matching it used and the gradients with
/// respect to `logits` (`[K, P]`, row-major) and `boxes` (`[K, 4]`).
#[derive(Clone, Debug)]
pub struct LossWithGrad {
    pub loss: LossBreakdown,
    pub matching: MatchResult,
    pub grad_logits: Vec<f64>,
    pub grad_boxes: Vec<f64>,
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Focal loss of one logit against a positive target and its derivative.
fn focal_pos(x: f64, w: &LossWeights) -> (f64, f64) {
    let p = sigmoid(x);
    let q = 1.0 - p;
    let sp = softplus(-x); // −ln p
    let qg = q.powf(w.focal_gamma);
    let value = w.focal_alpha * qg * sp;
    let grad = -w.focal_alpha * qg * (w.focal_gamma * p * sp + q);
    (value, grad)
}

/// Focal loss of one logit against a negative target and its derivative.
fn focal_neg(x: f64, w: &LossWeights) -> (f64, f64) {
    let p = sigmoid(x);
    let sp = softplus(x); // −ln(1 − p)
    let pg = p.powf(w.focal_gamma);
    let value = (1.0 - w.focal_alpha) * pg * sp;
    let grad = (1.0 - w.focal_alpha) * pg * (w.focal_gamma * (1.0 - p) * sp + p);
    (value, grad)
}

fn read_box(boxes: &[f64], k: usize) -> BoxCxcywh {
    [boxes[4 * k], boxes[4 * k + 1], boxes[4 * k + 2], boxes[4 * k + 3]]
}

fn check_inputs(logits: &Tensor<f64>, boxes: &Tensor<f64>, gt: &GroundTruth) -> Result<(usize, usize)> {
    let [k, p] = logits.dims2()?;
    let [kb, four] = boxes.dims2()?;
    if kb != k || four != 4 {
        return dim_err(format!("logits {:?} and boxes {:?} disagree", logits.shape(), boxes.shape()));
    }
    if gt.boxes.len() != gt.labels.len() {
        return dim_err("ground-truth boxes and labels differ in length");
    }
    if let Some(&l) = gt.labels.iter().find(|&&l| l >= p) {
        return Err(Error::Validation(format!("label {l} out of range for {p} phrases")));
    }
    for b in boxes.data().chunks(4) {
        if !(b[2] > 0.0 && b[3] > 0.0) || b.iter().any(|v| !v.is_finite()) {
            return Err(Error::Validation(format!("predicted box {b:?} must be finite with positive size")));
        }
    }
    if !logits.is_finite() {
        return Err(Error::Validation("logits contain non-finite values".into()));
    }
    Ok((k, p))
}

/// The `[K, G]` matching cost matrix.
pub fn matching_cost(logits: &Tensor<f64>, boxes: &Tensor<f64>, gt: &GroundTruth, w: &LossWeights) -> Result<Vec<f64>> {
    let (k, p) = check_inputs(logits, boxes, gt)?;
    let g = gt.len();
    let mut cost = Vec::with_capacity(k * g);
    for q in 0..k {
        let pred = read_box(boxes.data(), q);
        for (b, &label) in gt.boxes.iter().zip(&gt.labels) {
            let x = logits.data()[q * p + label];
            let cls = focal_pos(x, w).0 - focal_neg(x, w).0;
            let l1: f64 = (0..4).map(|c| (pred[c] - b[c]).abs()).sum();
            let giou = giou_with_grad(&pred, b).0;
            cost.push(w.cls * cls + w.l1 * l1 + w.giou * (1.0 - giou));
        }
    }
    Ok(cost)
}

pub fn match_predictions(logits: &Tensor<f64>, boxes: &Tensor<f64>, gt: &GroundTruth, w: &LossWeights) -> Result<MatchResult> {
    let cost = matching_cost(logits, boxes, gt, w)?;
    hungarian_match(&cost, logits.dim(0), gt.len())
}

/// Loss and gradient for a given matching.
pub fn loss_for_matching(
    logits: &Tensor<f64>,
    boxes: &Tensor<f64>,
    gt: &GroundTruth,
    w: &LossWeights,
    matching: &MatchResult,
) -> Result<LossWithGrad> {
    let (k, p) = check_inputs(logits, boxes, gt)?;
    let norm = gt.len().max(1) as f64;
    let mut target = vec![None; k];
    for &(q, t) in &matching.pairs {
        if q >= k || t >= gt.len() {
            return Err(Error::Validation(format!("matching pair ({q}, {t}) out of range")));
        }
        target[q] = Some(t);
    }

    let mut cls = 0.0;
    let mut grad_logits = vec![0.0; k * p];
    for q in 0..k {
        let positive = target[q].map(|t| gt.labels[t]);
        for j in 0..p {
            let x = logits.data()[q * p + j];
            let (v, g) = if positive == Some(j) { focal_pos(x, w) } else { focal_neg(x, w) };
            cls += v;
            grad_logits[q * p + j] = w.cls * g / norm;
        }
    }

    let mut l1 = 0.0;
    let mut giou_loss = 0.0;
    let mut grad_boxes = vec![0.0; k * 4];
    for &(q, t) in &matching.pairs {
        let pred = read_box(boxes.data(), q);
        let b = &gt.boxes[t];
        let (giou, dg) = giou_with_grad(&pred, b);
        giou_loss += 1.0 - giou;
        for c in 0..4 {
            let diff = pred[c] - b[c];
            l1 += diff.abs();
            let sign = if diff > 0.0 {
                1.0
            } else if diff < 0.0 {
                -1.0
            } else {
                0.0
            };
            grad_boxes[4 * q + c] = (w.l1 * sign - w.giou * dg[c]) / norm;
        }
    }

    let (cls, l1, giou) = (cls / norm, l1 / norm, giou_loss / norm);
    let loss = LossBreakdown { cls, l1, giou, total: w.cls * cls + w.l1 * l1 + w.giou * giou };
    Ok(LossWithGrad { loss, matching: matching.clone(), grad_logits, grad_boxes })
}

pub fn detection_loss_with_grad(logits: &Tensor<f64>, boxes: &Tensor<f64>, gt: &GroundTruth, w: &LossWeights) -> Result<LossWithGrad> {
    let matching = match_predictions(logits, boxes, gt, w)?;
    loss_for_matching(logits, boxes, gt, w, &matching)
}

/// `logits` is `[K, P]` over prompt phrases, `boxes` is `[K, 4]` normalized
/// `cxcywh`.
pub fn detection_loss(logits: &Tensor<f64>, boxes: &Tensor<f64>, gt: &GroundTruth, w: &LossWeights) -> Result<LossBreakdown> {
    Ok(detection_loss_with_grad(logits, boxes, gt, w)?.loss)
}
