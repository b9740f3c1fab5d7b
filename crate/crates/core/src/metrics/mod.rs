//! Evaluation: detection AP/AR/F1, tracking CLEAR-MOT family, forecast
//! displacement errors, and the CAV convex-hull area.

mod detection;
mod prediction;
mod tracking;

pub use detection::{detection_pr, match_frame, DetectionAccumulator, PrScores, DETECTION_IOU_THRESHOLDS};
pub use prediction::{
    prediction_ade_fde, top_modes, AdeFde, PredictionAccumulator, PredictionEval, HORIZON_STEPS, TOP_MODES,
};
pub use tracking::{tracking_metrics, ClearCounts, TrackFrame, TrackingEval, RECALL_POINTS, TRACKING_IOU};

use crate::geometry::{convex_hull, signed_area};
use serde::{Deserialize, Serialize};

/// Area of the convex hull of the CAV positions; zero for fewer than three
/// points or collinear sets.
pub fn hull_area(points: &[(f64, f64)]) -> f64 {
    let hull = convex_hull(points);
    if hull.len() < 3 {
        0.0
    } else {
        signed_area(&hull).abs()
    }
}

/// AP/AR/F1 at each of [`DETECTION_IOU_THRESHOLDS`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct DetectionEval {
    pub at: [PrScores; 3],
}
