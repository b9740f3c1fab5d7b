//! Scoring of a run log against the scenario ground truth.

use super::RunLog;
use crate::error::{Error, Result};
use crate::geometry::{BoundingBox3D, Pose2D};
use crate::gmm::GmmTrajectory;
use crate::metrics::{
    hull_area, prediction_ade_fde, tracking_metrics, DetectionAccumulator, DetectionEval, PredictionAccumulator,
    PredictionEval, TrackFrame, TrackingEval, DETECTION_IOU_THRESHOLDS, HORIZON_STEPS, TOP_MODES, TRACKING_IOU,
};
use crate::scenario::{FrameTruth, Scenario, FUTURE_FRAMES};
use crate::tracking::TrackOutput;
use crate::v2x::{BandwidthReport, MessageKind};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    /// Forecasts are scored every `stride` frames.
    pub stride: usize,
    /// Half side of the square evaluation area around the ego, metres.
    pub area_half: f64,
    /// Largest track-to-agent centre distance for a forecast to count as
    /// belonging to that agent, metres.
    pub match_dist: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            stride: 5,
            area_half: 50.0,
            match_dist: 2.0,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.stride == 0 {
            return Err(Error::validation("eval.stride", "must be at least 1"));
        }
        if !(self.area_half > 0.0) || !(self.match_dist > 0.0) {
            return Err(Error::validation("eval", "area and match distance must be positive"));
        }
        Ok(())
    }

    /// Whether a world-frame point lies in the ego's evaluation area.
    pub fn in_area(&self, ego: &Pose2D, x: f64, y: f64) -> bool {
        let (lx, ly) = ego.to_local(x, y);
        lx.abs() <= self.area_half && ly.abs() <= self.area_half
    }
}

/// Upper edges of the first two hull-area bins, square metres.
pub const HULL_BINS: [f64; 2] = [50.0, 200.0];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HullBin {
    Small,
    Medium,
    Large,
}

impl HullBin {
    pub const ALL: [HullBin; 3] = [HullBin::Small, HullBin::Medium, HullBin::Large];

    pub fn label(self) -> &'static str {
        match self {
            HullBin::Small => "<50",
            HullBin::Medium => "50-200",
            HullBin::Large => ">200",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

pub fn hull_bin(area: f64) -> HullBin {
    if area < HULL_BINS[0] {
        HullBin::Small
    } else if area <= HULL_BINS[1] {
        HullBin::Medium
    } else {
        HullBin::Large
    }
}

/// Displacement errors of one scored forecast.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastRecord {
    pub ego: u64,
    pub frame: usize,
    pub track_id: u64,
    pub gt_id: u64,
    pub hull_area: f64,
    pub ade: [f64; 3],
    pub fde: [f64; 3],
}

/// An eligible agent for which the ego had no forecast.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MissRecord {
    pub ego: u64,
    pub frame: usize,
    pub gt_id: u64,
    pub hull_area: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub detection: DetectionEval,
    pub tracking: TrackingEval,
    pub prediction: PredictionEval,
    /// Prediction metrics split by CAV hull area, indexed by [`HullBin`].
    pub prediction_by_hull: [PredictionEval; 3],
    pub bandwidth: BandwidthReport,
    pub feature_drops: usize,
}

/// Ground truth scored for `ego` at one frame: every agent in its area
/// except the ego itself, world frame.
fn eval_truth(ego: u64, truth: &FrameTruth, cfg: &EvalConfig) -> Result<Vec<(u64, BoundingBox3D)>> {
    let pose = truth
        .cav_poses
        .get(&ego)
        .ok_or_else(|| Error::invalid("evaluation", format!("CAV {ego} absent at frame {}", truth.frame)))?;
    Ok(truth
        .boxes
        .iter()
        .filter(|(id, b)| *id != ego && cfg.in_area(pose, b.x, b.y))
        .copied()
        .collect())
}

pub(crate) fn frame_hull(truth: &FrameTruth) -> f64 {
    let pts: Vec<(f64, f64)> = truth.cav_poses.values().map(|p| (p.x, p.y)).collect();
    hull_area(&pts)
}

/// Assigns forecasts to eligible agents by greedy nearest track centre and
/// scores the matched ones.
pub(crate) fn score_forecasts(
    ego: u64,
    frame: usize,
    tracks: &[TrackOutput],
    forecasts: &[GmmTrajectory],
    truth: &FrameTruth,
    scenario: &Scenario,
    cfg: &EvalConfig,
) -> Result<(Vec<ForecastRecord>, Vec<MissRecord>)> {
    let hull = frame_hull(truth);
    let eligible: Vec<(u64, BoundingBox3D, Vec<(f64, f64)>)> = eval_truth(ego, truth, cfg)?
        .into_iter()
        .filter_map(|(id, b)| scenario.future(id, frame, FUTURE_FRAMES).map(|f| (id, b, f)))
        .collect();
    let mut pairs: Vec<(f64, usize, usize)> = Vec::new();
    for (fi, g) in forecasts.iter().enumerate() {
        let Some(t) = tracks.iter().find(|t| t.id == g.agent_id) else {
            continue;
        };
        for (gi, (_, b, _)) in eligible.iter().enumerate() {
            let d = (t.bbox.x - b.x).hypot(t.bbox.y - b.y);
            if d <= cfg.match_dist {
                pairs.push((d, fi, gi));
            }
        }
    }
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut f_used = vec![false; forecasts.len()];
    let mut g_used = vec![false; eligible.len()];
    let mut records = Vec::new();
    for (_, fi, gi) in pairs {
        if f_used[fi] || g_used[gi] {
            continue;
        }
        f_used[fi] = true;
        g_used[gi] = true;
        let (gt_id, _, future) = &eligible[gi];
        let e = prediction_ade_fde(&forecasts[fi], future, HORIZON_STEPS, TOP_MODES)?;
        records.push(ForecastRecord {
            ego,
            frame,
            track_id: forecasts[fi].agent_id,
            gt_id: *gt_id,
            hull_area: hull,
            ade: e.ade,
            fde: e.fde,
        });
    }
    let misses = eligible
        .iter()
        .zip(&g_used)
        .filter(|(_, used)| !**used)
        .map(|((id, _, _), _)| MissRecord {
            ego,
            frame,
            gt_id: *id,
            hull_area: hull,
        })
        .collect();
    Ok((records, misses))
}

/// Recomputes every metric of a run from its log and the scenario it ran on.
pub fn evaluate(log: &RunLog, scenario: &Scenario) -> Result<RunMetrics> {
    if log.scenario_seed != scenario.seed || log.n_frames != scenario.n_frames {
        return Err(Error::invalid("evaluation", "log does not belong to this scenario"));
    }
    let cfg = &log.config.eval;
    let mut det = [
        DetectionAccumulator::default(),
        DetectionAccumulator::default(),
        DetectionAccumulator::default(),
    ];
    let mut sequences: Vec<Vec<TrackFrame>> = Vec::with_capacity(log.egos.len());
    let truths: Vec<FrameTruth> = (0..scenario.n_frames).map(|f| scenario.truth_at(f)).collect::<Result<_>>()?;
    for ego in &log.egos {
        let mut seq = Vec::with_capacity(ego.frames.len());
        for ef in &ego.frames {
            let truth = &truths[ef.frame];
            let pose = truth.cav_poses[&ego.cav];
            let gts = eval_truth(ego.cav, truth, cfg)?;
            let gt_boxes: Vec<BoundingBox3D> = gts.iter().map(|(_, b)| *b).collect();
            let dets: Vec<BoundingBox3D> = ef
                .detections
                .iter()
                .filter(|b| cfg.in_area(&pose, b.x, b.y))
                .copied()
                .collect();
            for (acc, &t) in det.iter_mut().zip(&DETECTION_IOU_THRESHOLDS) {
                acc.add_frame(&dets, &gt_boxes, t);
            }
            seq.push(TrackFrame {
                tracks: ef
                    .tracks
                    .iter()
                    .filter(|t| cfg.in_area(&pose, t.bbox.x, t.bbox.y))
                    .map(|t| (t.id, t.bbox))
                    .collect(),
                gts,
            });
        }
        sequences.push(seq);
    }
    let mut all = PredictionAccumulator::default();
    let mut by_hull = [
        PredictionAccumulator::default(),
        PredictionAccumulator::default(),
        PredictionAccumulator::default(),
    ];
    for r in &log.forecasts {
        let e = crate::metrics::AdeFde { ade: r.ade, fde: r.fde };
        all.add(&e);
        by_hull[hull_bin(r.hull_area).index()].add(&e);
    }
    for m in &log.prediction_misses {
        all.add_miss();
        by_hull[hull_bin(m.hull_area).index()].add_miss();
    }
    Ok(RunMetrics {
        detection: DetectionEval {
            at: [det[0].scores(), det[1].scores(), det[2].scores()],
        },
        tracking: tracking_metrics(&sequences, TRACKING_IOU)?,
        prediction: all.eval(),
        prediction_by_hull: by_hull.map(|a| a.eval()),
        bandwidth: log.bandwidth.clone(),
        feature_drops: log.slots.iter().filter(|s| s.kind == MessageKind::FeatureEvidence && s.dropped).count(),
    })
}
