//! Average precision / recall / F1 for scored box detections.

use crate::geometry::{iou_3d, BoundingBox3D};
use serde::{Deserialize, Serialize};

pub const DETECTION_IOU_THRESHOLDS: [f64; 3] = [0.3, 0.5, 0.7];

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PrScores {
    pub ap: f64,
    pub ar: f64,
    pub f1: f64,
}

/// Score-ordered greedy matching of one frame: each detection takes the
/// unmatched ground truth it overlaps most, if that IoU reaches `iou_t`.
/// Returns `(score, is_true_positive)` per detection.
pub fn match_frame(dets: &[BoundingBox3D], gts: &[BoundingBox3D], iou_t: f64) -> Vec<(f64, bool)> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| dets[b].score.total_cmp(&dets[a].score).then(a.cmp(&b)));
    let mut taken = vec![false; gts.len()];
    order
        .into_iter()
        .map(|i| {
            let best = gts
                .iter()
                .enumerate()
                .filter(|(j, _)| !taken[*j])
                .map(|(j, g)| (j, iou_3d(&dets[i], g)))
                .filter(|&(_, iou)| iou >= iou_t)
                .max_by(|a, b| a.1.total_cmp(&b.1).then(b.0.cmp(&a.0)));
            if let Some((j, _)) = best {
                taken[j] = true;
            }
            (dets[i].score, best.is_some())
        })
        .collect()
}

/// Pools matches over many frames before computing the curve.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DetectionAccumulator {
    pub matches: Vec<(f64, bool)>,
    pub n_gt: usize,
}

impl DetectionAccumulator {
    pub fn add_frame(&mut self, dets: &[BoundingBox3D], gts: &[BoundingBox3D], iou_t: f64) {
        self.matches.extend(match_frame(dets, gts, iou_t));
        self.n_gt += gts.len();
    }

    pub fn merge(&mut self, other: &DetectionAccumulator) {
        self.matches.extend_from_slice(&other.matches);
        self.n_gt += other.n_gt;
    }

    /// All-point interpolated AP, final recall, and best F1. Zero when there
    /// is no ground truth.
    pub fn scores(&self) -> PrScores {
        if self.n_gt == 0 {
            return PrScores::default();
        }
        let mut m = self.matches.clone();
        m.sort_by(|a, b| b.0.total_cmp(&a.0));
        let mut tp = 0usize;
        let mut precision = Vec::with_capacity(m.len());
        let mut recall = Vec::with_capacity(m.len());
        let mut f1: f64 = 0.0;
        for (i, &(_, hit)) in m.iter().enumerate() {
            if hit {
                tp += 1;
            }
            let p = tp as f64 / (i + 1) as f64;
            let r = tp as f64 / self.n_gt as f64;
            precision.push(p);
            recall.push(r);
            if p + r > 0.0 {
                f1 = f1.max(2.0 * p * r / (p + r));
            }
        }
        // Precision envelope, then area under the step curve.
        for i in (0..precision.len().saturating_sub(1)).rev() {
            precision[i] = precision[i].max(precision[i + 1]);
        }
        let mut ap = 0.0;
        let mut prev_r = 0.0;
        for (p, r) in precision.iter().zip(&recall) {
            ap += (r - prev_r) * p;
            prev_r = *r;
        }
        PrScores {
            ap: ap.clamp(0.0, 1.0),
            ar: recall.last().copied().unwrap_or(0.0),
            f1,
        }
    }
}

/// AP, AR and F1 of one set of detections against one set of ground truth.
pub fn detection_pr(dets: &[BoundingBox3D], gts: &[BoundingBox3D], iou_t: f64) -> PrScores {
    let mut acc = DetectionAccumulator::default();
    acc.add_frame(dets, gts, iou_t);
    acc.scores()
}
