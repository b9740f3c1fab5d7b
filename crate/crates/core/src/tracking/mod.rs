//! Multi-object tracker: Kalman prediction, two-pass association, and a
//! birth/death lifecycle. Tracks live in the world frame.

mod assignment;
pub mod kalman;

pub use assignment::hungarian;
pub use kalman::KalmanState;

use crate::error::{Error, Result};
use crate::geometry::{iou_3d, BoundingBox3D};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// History entries retained per track.
const HISTORY_CAP: usize = 32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrackerConfig {
    /// Consecutive hits needed to confirm a track.
    pub f_min: u32,
    /// Consecutive misses after which a track is deleted.
    pub age_min: u32,
    pub iou_min: f64,
    /// Center-distance gate of the second association pass, metres.
    pub dist_max: f64,
    pub q_diag: [f64; 10],
    pub r_diag: [f64; 7],
    /// Initial covariance on observed dimensions, as a multiple of `r_diag`.
    pub p0_scale: f64,
    pub p0_velocity: f64,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        Self {
            f_min: 3,
            age_min: 2,
            iou_min: 0.01,
            dist_max: 10.0,
            q_diag: [0.1, 0.1, 0.1, 0.01, 0.01, 0.01, 0.01, 1.0, 1.0, 1.0],
            r_diag: [0.1, 0.1, 0.1, 0.01, 0.01, 0.01, 0.01],
            p0_scale: 10.0,
            p0_velocity: 100.0,
        }
    }
}

impl TrackerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.f_min == 0 || self.age_min == 0 {
            return Err(Error::invalid("tracker config", "f_min and age_min must be positive"));
        }
        if !(self.iou_min > 0.0) || !(self.dist_max > 0.0) {
            return Err(Error::invalid("tracker config", "iou_min and dist_max must be positive"));
        }
        let noise = self.q_diag.iter().chain(self.r_diag.iter());
        if noise.into_iter().any(|v| !(*v > 0.0)) || !(self.p0_scale > 0.0) || !(self.p0_velocity > 0.0) {
            return Err(Error::invalid("tracker config", "noise terms must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub frame: usize,
    pub bbox: BoundingBox3D,
    /// No detection was associated; `bbox` is the Kalman prediction.
    pub predicted: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Track {
    pub id: u64,
    pub state: KalmanState,
    pub hits: u32,
    pub misses: u32,
    pub age: u32,
    pub confirmed: bool,
    pub history: Vec<HistoryEntry>,
    pub last_score: f64,
    pub score_sum: f64,
    pub matched_frames: u32,
}

impl Track {
    fn born(id: u64, frame: usize, det: &BoundingBox3D, cfg: &TrackerConfig) -> Self {
        Self {
            id,
            state: KalmanState::from_box(det, cfg),
            hits: 1,
            misses: 0,
            age: 0,
            confirmed: cfg.f_min <= 1,
            history: vec![HistoryEntry {
                frame,
                bbox: *det,
                predicted: false,
            }],
            last_score: det.score,
            score_sum: det.score,
            matched_frames: 1,
        }
    }

    pub fn current_box(&self) -> BoundingBox3D {
        self.state.to_box(self.last_score)
    }

    pub fn mean_score(&self) -> f64 {
        if self.matched_frames == 0 {
            0.0
        } else {
            self.score_sum / self.matched_frames as f64
        }
    }

    fn push_history(&mut self, entry: HistoryEntry) {
        self.history.push(entry);
        if self.history.len() > HISTORY_CAP {
            self.history.remove(0);
        }
    }
}

pub fn kf_predict(t: &Track, dt: f64, cfg: &TrackerConfig) -> Track {
    Track {
        state: kalman::predict(&t.state, dt, cfg),
        ..t.clone()
    }
}

pub fn kf_update(t: &Track, z: &BoundingBox3D, cfg: &TrackerConfig) -> Track {
    Track {
        state: kalman::update(&t.state, z, cfg),
        hits: t.hits + 1,
        misses: 0,
        last_score: z.score,
        score_sum: t.score_sum + z.score,
        matched_frames: t.matched_frames + 1,
        ..t.clone()
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Association {
    /// `(track index, detection index)`.
    pub matches: Vec<(usize, usize)>,
    pub unmatched_tracks: Vec<usize>,
    pub unmatched_detections: Vec<usize>,
}

/// Matches predicted track boxes to detections: an optimal assignment that
/// maximizes total IoU over pairs with IoU >= `iou_min`, then a greedy pass
/// on center distance <= `dist_max` for whatever is left.
pub fn associate(predicted: &[BoundingBox3D], detections: &[BoundingBox3D], cfg: &TrackerConfig) -> Association {
    let mut matches = Vec::new();
    let mut track_used = vec![false; predicted.len()];
    let mut det_used = vec![false; detections.len()];
    if !predicted.is_empty() && !detections.is_empty() {
        let iou: Vec<Vec<f64>> = predicted
            .iter()
            .map(|t| detections.iter().map(|d| iou_3d(t, d)).collect())
            .collect();
        let cost: Vec<Vec<f64>> = iou
            .iter()
            .map(|row| row.iter().map(|&v| if v >= cfg.iou_min { -v } else { 0.0 }).collect())
            .collect();
        for (ti, dj) in hungarian(&cost).into_iter().enumerate() {
            if let Some(dj) = dj {
                if iou[ti][dj] >= cfg.iou_min {
                    matches.push((ti, dj));
                    track_used[ti] = true;
                    det_used[dj] = true;
                }
            }
        }
        let mut pairs: Vec<(f64, usize, usize)> = Vec::new();
        for (ti, t) in predicted.iter().enumerate().filter(|(i, _)| !track_used[*i]) {
            for (dj, d) in detections.iter().enumerate().filter(|(j, _)| !det_used[*j]) {
                let dist = t.center_distance(d);
                if dist <= cfg.dist_max {
                    pairs.push((dist, ti, dj));
                }
            }
        }
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
        for (_, ti, dj) in pairs {
            if !track_used[ti] && !det_used[dj] {
                track_used[ti] = true;
                det_used[dj] = true;
                matches.push((ti, dj));
            }
        }
    }
    matches.sort_unstable();
    Association {
        matches,
        unmatched_tracks: (0..predicted.len()).filter(|&i| !track_used[i]).collect(),
        unmatched_detections: (0..detections.len()).filter(|&j| !det_used[j]).collect(),
    }
}

/// A confirmed track as reported for one frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrackOutput {
    pub id: u64,
    pub bbox: BoundingBox3D,
    pub vx: f64,
    pub vy: f64,
    /// False when the track was coasted this frame.
    pub matched: bool,
}

/// Applies association results: updates matched tracks, ages unmatched ones,
/// deletes tracks that reached `age_min` misses and spawns tentative tracks
/// from unmatched detections. `tracks` must already be time-updated.
pub fn lifecycle_step(
    tracks: Vec<Track>,
    detections: &[BoundingBox3D],
    assoc: &Association,
    frame: usize,
    next_id: &mut u64,
    cfg: &TrackerConfig,
) -> Vec<Track> {
    let mut out: Vec<Track> = Vec::with_capacity(tracks.len() + assoc.unmatched_detections.len());
    let matched: BTreeMap<usize, usize> = assoc.matches.iter().copied().collect();
    for (ti, t) in tracks.into_iter().enumerate() {
        let mut t = match matched.get(&ti) {
            Some(&dj) => {
                let mut u = kf_update(&t, &detections[dj], cfg);
                let bbox = u.current_box();
                u.push_history(HistoryEntry {
                    frame,
                    bbox,
                    predicted: false,
                });
                u
            }
            None => {
                let mut u = t;
                u.misses += 1;
                u.hits = 0;
                let bbox = u.current_box();
                u.push_history(HistoryEntry {
                    frame,
                    bbox,
                    predicted: true,
                });
                u
            }
        };
        t.age += 1;
        if t.hits >= cfg.f_min {
            t.confirmed = true;
        }
        if t.misses < cfg.age_min {
            out.push(t);
        }
    }
    for &dj in &assoc.unmatched_detections {
        out.push(Track::born(*next_id, frame, &detections[dj], cfg));
        *next_id += 1;
    }
    out
}

/// Up to `t_h` most recent history entries of every confirmed track.
pub fn track_histories(tracks: &[Track], t_h: usize) -> Result<BTreeMap<u64, Vec<HistoryEntry>>> {
    if t_h == 0 {
        return Err(Error::invalid("history length", "must be at least 1"));
    }
    Ok(tracks
        .iter()
        .filter(|t| t.confirmed)
        .map(|t| {
            let start = t.history.len().saturating_sub(t_h);
            (t.id, t.history[start..].to_vec())
        })
        .collect())
}

/// One tracker instance, owned by one CAV.
#[derive(Debug, Clone)]
pub struct Tracker {
    pub cfg: TrackerConfig,
    pub dt: f64,
    pub tracks: Vec<Track>,
    next_id: u64,
    last_frame: Option<usize>,
}

impl Tracker {
    pub fn new(cfg: TrackerConfig, dt: f64) -> Self {
        Self {
            cfg,
            dt,
            tracks: Vec::new(),
            next_id: 0,
            last_frame: None,
        }
    }

    /// Advances the tracker to `frame` with world-frame detections and
    /// returns the confirmed tracks.
    pub fn step(&mut self, frame: usize, detections: &[BoundingBox3D]) -> Vec<TrackOutput> {
        let elapsed = self.last_frame.map_or(0, |f| frame.saturating_sub(f));
        if elapsed > 0 {
            let dt = self.dt * elapsed as f64;
            self.tracks = self.tracks.iter().map(|t| kf_predict(t, dt, &self.cfg)).collect();
        }
        self.last_frame = Some(frame);
        let predicted: Vec<BoundingBox3D> = self.tracks.iter().map(Track::current_box).collect();
        let assoc = associate(&predicted, detections, &self.cfg);
        let tracks = std::mem::take(&mut self.tracks);
        self.tracks = lifecycle_step(tracks, detections, &assoc, frame, &mut self.next_id, &self.cfg);
        self.outputs()
    }

    pub fn outputs(&self) -> Vec<TrackOutput> {
        self.tracks
            .iter()
            .filter(|t| t.confirmed && t.misses < self.cfg.age_min)
            .map(|t| {
                let (vx, vy) = t.state.velocity();
                TrackOutput {
                    id: t.id,
                    bbox: t.current_box(),
                    vx,
                    vy,
                    matched: t.misses == 0,
                }
            })
            .collect()
    }

    pub fn histories(&self, t_h: usize) -> Result<BTreeMap<u64, Vec<HistoryEntry>>> {
        track_histories(&self.tracks, t_h)
    }

    pub fn track(&self, id: u64) -> Option<&Track> {
        self.tracks.iter().find(|t| t.id == id)
    }
}
