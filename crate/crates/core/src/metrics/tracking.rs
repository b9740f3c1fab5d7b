//! CLEAR-MOT style tracking metrics with recall-averaged variants.

use crate::error::{Error, Result};
use crate::geometry::{iou_3d, BoundingBox3D};
use crate::tracking::hungarian;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};

pub const TRACKING_IOU: f64 = 0.25;
pub const RECALL_POINTS: usize = 40;

/// One frame: tracker output `(track id, box with confidence)` and ground
/// truth `(agent id, box)`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrackFrame {
    pub tracks: Vec<(u64, BoundingBox3D)>,
    pub gts: Vec<(u64, BoundingBox3D)>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ClearCounts {
    pub gt: usize,
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub ids: usize,
    pub iou_sum: f64,
}

impl ClearCounts {
    pub fn mota(&self) -> f64 {
        1.0 - (self.fn_ + self.fp + self.ids) as f64 / self.gt as f64
    }

    pub fn motp(&self) -> f64 {
        if self.tp == 0 {
            0.0
        } else {
            self.iou_sum / self.tp as f64
        }
    }

    fn add(&mut self, o: &ClearCounts) {
        self.gt += o.gt;
        self.tp += o.tp;
        self.fp += o.fp;
        self.fn_ += o.fn_;
        self.ids += o.ids;
        self.iou_sum += o.iou_sum;
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct TrackingEval {
    pub mota: f64,
    pub motp: f64,
    pub amota: f64,
    pub amotp: f64,
    pub samota: f64,
    pub mt: f64,
    pub ml: f64,
    pub id_switches: usize,
    pub false_negatives: usize,
    pub false_positives: usize,
}

struct SequenceResult {
    counts: ClearCounts,
    /// Scores of tracks that were matched, one entry per match.
    tp_scores: Vec<f64>,
    /// Per ground-truth id: (frames present, frames matched).
    coverage: BTreeMap<u64, (usize, usize)>,
}

/// Matches one sequence: correspondences from the previous frame are kept
/// while they still overlap, the rest are assigned optimally by IoU.
fn evaluate_sequence(frames: &[TrackFrame], iou_t: f64, min_score: f64) -> SequenceResult {
    let mut counts = ClearCounts::default();
    let mut tp_scores = Vec::new();
    let mut coverage: BTreeMap<u64, (usize, usize)> = BTreeMap::new();
    let mut last_match: BTreeMap<u64, u64> = BTreeMap::new();
    let mut prev: BTreeMap<u64, u64> = BTreeMap::new();
    for f in frames {
        let tracks: Vec<&(u64, BoundingBox3D)> = f.tracks.iter().filter(|(_, b)| b.score >= min_score).collect();
        counts.gt += f.gts.len();
        let mut gt_used = vec![false; f.gts.len()];
        let mut tr_used = vec![false; tracks.len()];
        let mut pairs: Vec<(usize, usize, f64)> = Vec::new();
        for (gi, (gid, g)) in f.gts.iter().enumerate() {
            if let Some(tid) = prev.get(gid) {
                if let Some(ti) = tracks.iter().position(|(id, _)| id == tid) {
                    let iou = iou_3d(g, &tracks[ti].1);
                    if iou >= iou_t && !tr_used[ti] {
                        gt_used[gi] = true;
                        tr_used[ti] = true;
                        pairs.push((gi, ti, iou));
                    }
                }
            }
        }
        let free_g: Vec<usize> = (0..f.gts.len()).filter(|&i| !gt_used[i]).collect();
        let free_t: Vec<usize> = (0..tracks.len()).filter(|&i| !tr_used[i]).collect();
        if !free_g.is_empty() && !free_t.is_empty() {
            let iou: Vec<Vec<f64>> = free_g
                .iter()
                .map(|&gi| free_t.iter().map(|&ti| iou_3d(&f.gts[gi].1, &tracks[ti].1)).collect())
                .collect();
            let cost: Vec<Vec<f64>> = iou
                .iter()
                .map(|r| r.iter().map(|&v| if v >= iou_t { -v } else { 0.0 }).collect())
                .collect();
            for (r, c) in hungarian(&cost).into_iter().enumerate() {
                if let Some(c) = c {
                    if iou[r][c] >= iou_t {
                        pairs.push((free_g[r], free_t[c], iou[r][c]));
                    }
                }
            }
        }
        let mut now: BTreeMap<u64, u64> = BTreeMap::new();
        for &(gi, ti, iou) in &pairs {
            let gid = f.gts[gi].0;
            let tid = tracks[ti].0;
            if let Some(&old) = last_match.get(&gid) {
                if old != tid {
                    counts.ids += 1;
                }
            }
            last_match.insert(gid, tid);
            now.insert(gid, tid);
            counts.iou_sum += iou;
            tp_scores.push(tracks[ti].1.score);
        }
        counts.tp += pairs.len();
        counts.fn_ += f.gts.len() - pairs.len();
        counts.fp += tracks.len() - pairs.len();
        let matched: BTreeSet<u64> = now.keys().copied().collect();
        for (gid, _) in &f.gts {
            let e = coverage.entry(*gid).or_default();
            e.0 += 1;
            if matched.contains(gid) {
                e.1 += 1;
            }
        }
        prev = now;
    }
    SequenceResult {
        counts,
        tp_scores,
        coverage,
    }
}

fn pooled(sequences: &[Vec<TrackFrame>], iou_t: f64, min_score: f64) -> (ClearCounts, Vec<f64>, Vec<(usize, usize)>) {
    let mut counts = ClearCounts::default();
    let mut scores = Vec::new();
    let mut coverage = Vec::new();
    for s in sequences {
        let r = evaluate_sequence(s, iou_t, min_score);
        counts.add(&r.counts);
        scores.extend(r.tp_scores);
        coverage.extend(r.coverage.into_values());
    }
    (counts, scores, coverage)
}

/// Tracking metrics pooled over sequences (for example one per ego CAV).
///
/// The recall-averaged metrics sweep the track-confidence threshold through
/// the scores of matched tracks so that recall `r = k / 40` is reached;
/// recall levels the tracker cannot reach contribute zero. MOTA is not
/// clamped and may be negative.
pub fn tracking_metrics(sequences: &[Vec<TrackFrame>], iou_t: f64) -> Result<TrackingEval> {
    let (counts, mut tp_scores, coverage) = pooled(sequences, iou_t, f64::NEG_INFINITY);
    if counts.gt == 0 {
        return Err(Error::invalid("tracking metrics", "no ground truth"));
    }
    let gt = counts.gt as f64;
    tp_scores.sort_by(|a, b| b.total_cmp(a));
    let (mut amota, mut amotp, mut samota) = (0.0, 0.0, 0.0);
    let mut cache: BTreeMap<u64, ClearCounts> = BTreeMap::new();
    for k in 1..=RECALL_POINTS {
        let r = k as f64 / RECALL_POINTS as f64;
        let needed = (r * gt - 1e-9).ceil().max(1.0) as usize;
        let Some(&threshold) = tp_scores.get(needed - 1) else {
            continue;
        };
        let c = *cache
            .entry(threshold.to_bits())
            .or_insert_with(|| pooled(sequences, iou_t, threshold).0);
        amota += c.mota();
        amotp += c.motp();
        let s = 1.0 - (c.fp + c.fn_ + c.ids) as f64 / (r * gt) + (1.0 - r) / r;
        samota += s.clamp(0.0, 1.0);
    }
    let l = RECALL_POINTS as f64;
    let n_traj = coverage.len().max(1) as f64;
    let mt = coverage.iter().filter(|(n, m)| *m as f64 >= 0.8 * *n as f64).count() as f64 / n_traj;
    let ml = coverage.iter().filter(|(n, m)| *m as f64 <= 0.2 * *n as f64).count() as f64 / n_traj;
    Ok(TrackingEval {
        mota: counts.mota(),
        motp: counts.motp(),
        amota: amota / l,
        amotp: amotp / l,
        samota: samota / l,
        mt,
        ml,
        id_switches: counts.ids,
        false_negatives: counts.fn_,
        false_positives: counts.fp,
    })
}
