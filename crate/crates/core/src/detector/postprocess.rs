use serde::{Deserialize, Serialize};

use crate::error::{dim_err, Error, Result};
use crate::ops;
use crate::tensor::Tensor;

use super::decoder::LOGIT_LIMIT;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    /// Normalized `(cx, cy, w, h)` relative to the network input.
    pub bbox: [f32; 4],
    pub score: f32,
    /// Index into the prompt's phrases.
    pub label: usize,
}

/// Thresholded detections, sorted by descending score.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DetectionSet {
    pub detections: Vec<Detection>,
}

impl DetectionSet {
    pub fn len(&self) -> usize {
        self.detections.len()
    }

    pub fn is_empty(&self) -> bool {
        self.detections.is_empty()
    }

    pub fn boxes(&self) -> impl Iterator<Item = [f32; 4]> + '_ {
        self.detections.iter().map(|d| d.bbox)
    }

    pub fn scores(&self) -> impl Iterator<Item = f32> + '_ {
        self.detections.iter().map(|d| d.score)
    }

    pub fn labels(&self) -> impl Iterator<Item = usize> + '_ {
        self.detections.iter().map(|d| d.label)
    }
}

/// Scores each query by the sigmoid of its best phrase logit, keeps scores
/// `>= threshold`, sorts descending (ties keep query order) and truncates.
pub fn postprocess(logits: &Tensor<f32>, boxes: &Tensor<f32>, threshold: f32, max_detections: usize) -> Result<DetectionSet> {
    if !(0.0..=1.0).contains(&threshold) {
        return Err(Error::Validation(format!("threshold must be in [0, 1], got {threshold}")));
    }
    let [k, _] = logits.dims2()?;
    if boxes.shape() != [k, 4] {
        return dim_err(format!("postprocess: logits {:?} with boxes {:?}", logits.shape(), boxes.shape()));
    }
    let mut detections: Vec<Detection> = (0..k)
        .filter_map(|q| {
            let row = logits.row(q);
            let (label, &best) = row
                .iter()
                .enumerate()
                .fold((0, &f32::NEG_INFINITY), |acc, (j, v)| if *v > *acc.1 { (j, v) } else { acc });
            let score = ops::sigmoid(best.clamp(-LOGIT_LIMIT, LOGIT_LIMIT));
            let b = boxes.row(q);
            (score >= threshold).then_some(Detection { bbox: [b[0], b[1], b[2], b[3]], score, label })
        })
        .collect();
    detections.sort_by(|a, b| b.score.total_cmp(&a.score));
    detections.truncate(max_detections);
    Ok(DetectionSet { detections })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn inputs() -> (Tensor<f32>, Tensor<f32>) {
        let logits = Tensor::from_fn([6, 3], |i| ((i * 7) % 11) as f32 - 5.0).unwrap();
        let boxes = Tensor::from_fn([6, 4], |i| 0.1 + (i % 8) as f32 * 0.1).unwrap();
        (logits, boxes)
    }

    #[test]
    fn threshold_extremes() {
        let (l, b) = inputs();
        assert!(postprocess(&l, &b, 1.0, 100).unwrap().is_empty());
        assert_eq!(postprocess(&l, &b, 0.0, 100).unwrap().len(), 6);
        assert_eq!(postprocess(&l, &b, 0.0, 4).unwrap().len(), 4);
        // saturated logits still score strictly below one
        let hot = Tensor::full([2, 2], 1e6).unwrap();
        let bb = Tensor::full([2, 4], 0.5).unwrap();
        assert!(postprocess(&hot, &bb, 1.0, 10).unwrap().is_empty());
    }

    #[test]
    fn sorted_and_in_range() {
        let (l, b) = inputs();
        let set = postprocess(&l, &b, 0.0, 100).unwrap();
        let scores: Vec<f32> = set.scores().collect();
        assert!(scores.windows(2).all(|w| w[0] >= w[1]));
        assert!(scores.iter().all(|s| (0.0..=1.0).contains(s)));
        assert!(set.labels().all(|j| j < 3));
    }

    #[test]
    fn raising_threshold_gives_a_subset() {
        let (l, b) = inputs();
        let mut prev = postprocess(&l, &b, 0.0, 100).unwrap();
        for t in [0.1, 0.3, 0.5, 0.9, 0.99] {
            let next = postprocess(&l, &b, t, 100).unwrap();
            assert!(next.detections.iter().all(|d| prev.detections.contains(d)));
            prev = next;
        }
    }
}
