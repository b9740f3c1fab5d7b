//! Ground-truth worlds: agent trajectories, the CAV roster, the lane map and
//! the frame clock.
//!
//! Scenarios are plain JSON documents:
//!
//! ```text
//! {
//!   "dt": 0.1, "n_frames": 200, "seed": 7,
//!   "agents": [
//!     { "id": 0, "l": 4.5, "w": 2.0, "h": 1.6,
//!       "frames": [ { "frame": 0, "x": 0.0, "y": 0.0, "z": 0.8,
//!                     "yaw": 0.0, "vx": 10.0, "vy": 0.0 }, ... ] }
//!   ],
//!   "cav_ids": [0, 1],
//!   "map": [ { "kind": "lane_center", "points": [[-50.0, 0.0], [50.0, 0.0]] } ]
//! }
//! ```
//!
//! An agent's `frames` must be consecutive. CAVs must exist in every frame.

mod generator;
pub mod route;

pub use generator::{generate_synthetic, CavPlacement, GeneratorConfig, MapKind};

use crate::error::{Error, Result};
use crate::geometry::{BoundingBox3D, Pose2D};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

/// History length in frames (1.0 s at 10 Hz).
pub const HISTORY_FRAMES: usize = 10;
/// Prediction horizon in frames (5.0 s at 10 Hz).
pub const FUTURE_FRAMES: usize = 50;
pub const DEFAULT_DT: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolylineKind {
    LaneCenter,
    RoadEdge,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapPolyline {
    pub kind: PolylineKind,
    pub points: Vec<[f64; 2]>,
}

impl MapPolyline {
    pub fn segments(&self) -> impl Iterator<Item = ((f64, f64), (f64, f64))> + '_ {
        self.points
            .windows(2)
            .map(|w| ((w[0][0], w[0][1]), (w[1][0], w[1][1])))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgentState {
    pub frame: usize,
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub yaw: f64,
    pub vx: f64,
    pub vy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentRecord {
    pub id: u64,
    pub l: f64,
    pub w: f64,
    pub h: f64,
    pub frames: Vec<AgentState>,
}

impl AgentRecord {
    pub fn first_frame(&self) -> Option<usize> {
        self.frames.first().map(|s| s.frame)
    }

    pub fn state_at(&self, frame: usize) -> Option<&AgentState> {
        let first = self.first_frame()?;
        frame.checked_sub(first).and_then(|i| self.frames.get(i))
    }

    pub fn box_at(&self, frame: usize) -> Option<BoundingBox3D> {
        self.state_at(frame)
            .map(|s| BoundingBox3D::new(s.x, s.y, s.z, s.yaw, self.l, self.w, self.h, 1.0))
    }

    pub fn pose_at(&self, frame: usize) -> Option<Pose2D> {
        self.state_at(frame).map(|s| Pose2D::new(s.x, s.y, s.yaw))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub dt: f64,
    pub n_frames: usize,
    #[serde(default)]
    pub seed: u64,
    pub agents: Vec<AgentRecord>,
    #[serde(default)]
    pub cav_ids: Vec<u64>,
    #[serde(default)]
    pub map: Vec<MapPolyline>,
}

/// Ground truth at a single frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameTruth {
    pub frame: usize,
    pub boxes: Vec<(u64, BoundingBox3D)>,
    pub cav_poses: BTreeMap<u64, Pose2D>,
}

impl FrameTruth {
    pub fn box_of(&self, id: u64) -> Option<&BoundingBox3D> {
        self.boxes.iter().find(|(i, _)| *i == id).map(|(_, b)| b)
    }
}

impl Scenario {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(Error::validation("dt", "must be positive"));
        }
        if self.n_frames == 0 {
            return Err(Error::validation("n_frames", "must be at least 1"));
        }
        let mut ids = BTreeSet::new();
        for (i, a) in self.agents.iter().enumerate() {
            let field = |f: &str| format!("agents[{i}].{f}");
            if !ids.insert(a.id) {
                return Err(Error::validation(field("id"), format!("duplicate id {}", a.id)));
            }
            for (name, v) in [("l", a.l), ("w", a.w), ("h", a.h)] {
                if !(v.is_finite() && v > 0.0) {
                    return Err(Error::validation(field(name), "extent must be positive"));
                }
            }
            if a.frames.is_empty() {
                return Err(Error::validation(field("frames"), "agent has no frames"));
            }
            for (j, s) in a.frames.iter().enumerate() {
                let expected = a.frames[0].frame + j;
                if s.frame != expected {
                    return Err(Error::validation(
                        format!("agents[{i}].frames[{j}].frame"),
                        format!("expected consecutive frame {expected}, found {}", s.frame),
                    ));
                }
                if s.frame >= self.n_frames {
                    return Err(Error::validation(
                        format!("agents[{i}].frames[{j}].frame"),
                        format!("frame {} beyond n_frames {}", s.frame, self.n_frames),
                    ));
                }
                if ![s.x, s.y, s.z, s.yaw, s.vx, s.vy].iter().all(|v| v.is_finite()) {
                    return Err(Error::validation(
                        format!("agents[{i}].frames[{j}]"),
                        "non-finite state",
                    ));
                }
            }
        }
        if self.cav_ids.len() < 2 {
            return Err(Error::validation(
                "cav_ids",
                format!("at least 2 CAVs required, found {}", self.cav_ids.len()),
            ));
        }
        let mut seen = BTreeSet::new();
        for &c in &self.cav_ids {
            if !seen.insert(c) {
                return Err(Error::validation("cav_ids", format!("duplicate CAV id {c}")));
            }
            let Some(agent) = self.agent(c) else {
                return Err(Error::validation("cav_ids", format!("CAV {c} is not an agent")));
            };
            if agent.first_frame() != Some(0) || agent.frames.len() != self.n_frames {
                return Err(Error::validation(
                    "cav_ids",
                    format!("CAV {c} must have a pose in every frame"),
                ));
            }
        }
        for (i, poly) in self.map.iter().enumerate() {
            if poly.points.len() < 2 {
                return Err(Error::validation(format!("map[{i}].points"), "needs at least 2 points"));
            }
            for (j, w) in poly.points.windows(2).enumerate() {
                if w[0] == w[1] {
                    return Err(Error::validation(
                        format!("map[{i}].points[{}]", j + 1),
                        "repeats the previous point",
                    ));
                }
            }
        }
        Ok(())
    }

    pub fn agent(&self, id: u64) -> Option<&AgentRecord> {
        self.agents.iter().find(|a| a.id == id)
    }

    pub fn is_cav(&self, id: u64) -> bool {
        self.cav_ids.contains(&id)
    }

    /// Ground-truth boxes (score 1) and CAV poses at `frame`.
    pub fn truth_at(&self, frame: usize) -> Result<FrameTruth> {
        if frame >= self.n_frames {
            return Err(Error::FrameOutOfRange {
                frame,
                n_frames: self.n_frames,
            });
        }
        let boxes = self
            .agents
            .iter()
            .filter_map(|a| a.box_at(frame).map(|b| (a.id, b)))
            .collect();
        let cav_poses = self
            .cav_ids
            .iter()
            .filter_map(|&c| self.agent(c).and_then(|a| a.pose_at(frame)).map(|p| (c, p)))
            .collect();
        Ok(FrameTruth {
            frame,
            boxes,
            cav_poses,
        })
    }

    /// Positions of an agent over frames `from+1 ..= from+steps`, if it
    /// exists for all of them.
    pub fn future(&self, id: u64, from: usize, steps: usize) -> Option<Vec<(f64, f64)>> {
        let a = self.agent(id)?;
        (1..=steps)
            .map(|k| a.state_at(from + k).map(|s| (s.x, s.y)))
            .collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Scenario> {
        let s: Scenario = serde_json::from_str(text).map_err(|e| Error::Parse {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })?;
        s.validate()?;
        Ok(s)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }
}

pub fn load_scenario(path: &Path) -> Result<Scenario> {
    let text = std::fs::read_to_string(path)?;
    Scenario::from_json(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    const FIXTURE: &str = r#"{
  "dt": 0.1,
  "n_frames": 3,
  "agents": [
    { "id": 10, "l": 4.5, "w": 2.0, "h": 1.6,
      "frames": [
        { "frame": 0, "x": 1.0, "y": 2.0, "z": 0.8, "yaw": 0.0, "vx": 10.0, "vy": 0.0 },
        { "frame": 1, "x": 2.0, "y": 2.0, "z": 0.8, "yaw": 0.0, "vx": 10.0, "vy": 0.0 },
        { "frame": 2, "x": 3.0, "y": 2.0, "z": 0.8, "yaw": 0.0, "vx": 10.0, "vy": 0.0 }
      ] },
    { "id": 11, "l": 4.0, "w": 1.8, "h": 1.5,
      "frames": [
        { "frame": 0, "x": -5.0, "y": 0.0, "z": 0.75, "yaw": 1.5, "vx": 0.0, "vy": 2.0 },
        { "frame": 1, "x": -5.0, "y": 0.2, "z": 0.75, "yaw": 1.5, "vx": 0.0, "vy": 2.0 },
        { "frame": 2, "x": -5.0, "y": 0.4, "z": 0.75, "yaw": 1.5, "vx": 0.0, "vy": 2.0 }
      ] }
  ],
  "cav_ids": [10, 11],
  "map": [ { "kind": "lane_center", "points": [[-50.0, 2.0], [50.0, 2.0]] } ]
}"#;

    #[test]
    fn fixture_values_exact() {
        let s = Scenario::from_json(FIXTURE).unwrap();
        let a = s.agent(11).unwrap();
        assert_eq!(a.state_at(1).unwrap().y, 0.2);
        assert_eq!(a.state_at(2).unwrap().yaw, 1.5);
        let t = s.truth_at(2).unwrap();
        assert_eq!(t.box_of(10).unwrap().x, 3.0);
        assert_eq!(t.cav_poses.len(), 2);
    }

    #[test]
    fn truth_out_of_range() {
        let s = Scenario::from_json(FIXTURE).unwrap();
        assert!(matches!(
            s.truth_at(3),
            Err(Error::FrameOutOfRange { frame: 3, n_frames: 3 })
        ));
    }

    #[test]
    fn missing_cav_ids_names_field() {
        let text = FIXTURE.replace(r#""cav_ids": [10, 11],"#, "");
        match Scenario::from_json(&text) {
            Err(Error::Validation { field, .. }) => assert_eq!(field, "cav_ids"),
            other => panic!("expected validation error, got {other:?}"),
        }
    }

    #[test]
    fn parse_error_has_position() {
        let text = FIXTURE.replace(r#""n_frames": 3"#, r#""n_frames": "three""#);
        match Scenario::from_json(&text) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn gap_in_frames_rejected() {
        let text = FIXTURE.replace(r#""frame": 1, "x": 2.0"#, r#""frame": 2, "x": 2.0"#);
        assert!(matches!(
            Scenario::from_json(&text),
            Err(Error::Validation { .. })
        ));
    }
}
