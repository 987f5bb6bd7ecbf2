//! Set-prediction training pieces: box geometry, Hungarian matching, the
//! detection loss with its analytic gradient, negative-prompt sampling and a
//! finite-difference gradient checker.

pub mod boxes;
pub mod gradcheck;
pub mod loss;
pub mod matching;
pub mod negatives;

pub use boxes::{from_xyxy, generalized_iou, giou_near_kink, giou_with_grad, iou, to_xyxy, BoxCxcywh};
pub use gradcheck::{grad_check, grad_check_all, relative_error, GradCheckReport, Objective, REL_ERROR_FLOOR};
pub use loss::{
    detection_loss, detection_loss_with_grad, loss_for_matching, match_predictions, matching_cost, GroundTruth,
    LossBreakdown, LossWeights, LossWithGrad,
};
pub use matching::{hungarian_match, hungarian_match_tensor, MatchResult};
pub use negatives::{negative_count, sample_negative_prompts};

use crate::tensor::Tensor;

/// [`detection_loss`] as an [`Objective`] over the flat parameter vector
/// `logits ++ boxes` (`K·P + K·4` values).
#[derive(Clone, Debug)]
pub struct DetectionLossObjective {
    pub queries: usize,
    pub phrases: usize,
    pub gt: GroundTruth,
    pub weights: LossWeights,
}

impl DetectionLossObjective {
    pub fn pack(logits: &Tensor<f64>, boxes: &Tensor<f64>) -> Vec<f64> {
        let mut p = logits.data().to_vec();
        p.extend_from_slice(boxes.data());
        p
    }

    fn unpack(&self, p: &[f64]) -> (Tensor<f64>, Tensor<f64>) {
        let split = self.queries * self.phrases;
        let logits = Tensor::new([self.queries, self.phrases], p[..split].to_vec()).expect("logit block shape");
        let boxes = Tensor::new([self.queries, 4], p[split..].to_vec()).expect("box block shape");
        (logits, boxes)
    }

    fn matching(&self, p: &[f64]) -> Option<MatchResult> {
        let (l, b) = self.unpack(p);
        match_predictions(&l, &b, &self.gt, &self.weights).ok()
    }
}

impl Objective for DetectionLossObjective {
    fn value(&self, p: &[f64]) -> f64 {
        let (l, b) = self.unpack(p);
        detection_loss(&l, &b, &self.gt, &self.weights).map_or(f64::NAN, |r| r.total)
    }

    fn gradient(&self, p: &[f64]) -> Vec<f64> {
        let (l, b) = self.unpack(p);
        let r = detection_loss_with_grad(&l, &b, &self.gt, &self.weights).expect("valid loss inputs");
        let mut g = r.grad_logits;
        g.extend(r.grad_boxes);
        g
    }

    fn near_kink(&self, p: &[f64], coord: usize, eps: f64) -> bool {
        let Some(base) = self.matching(p) else { return true };
        for step in [eps, -eps] {
            let mut q = p.to_vec();
            q[coord] += step;
            if self.matching(&q).map(|m| m.pairs) != Some(base.pairs.clone()) {
                return true;
            }
        }
        let split = self.queries * self.phrases;
        if coord < split {
            return false;
        }
        let (query, c) = ((coord - split) / 4, (coord - split) % 4);
        let Some(t) = base.target_of(query) else { return false };
        let pred: BoxCxcywh = std::array::from_fn(|i| p[split + 4 * query + i]);
        let gt = &self.gt.boxes[t];
        (pred[c] - gt[c]).abs() < 2.0 * eps || boxes::giou_near_kink(&pred, gt, c, eps)
    }
}
