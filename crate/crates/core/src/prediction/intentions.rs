//! Intention points: k-means centers of ground-truth trajectory endpoints in
//! the agent-centric frame (x forward, y left).

use crate::error::{Error, Result};
use crate::geometry::Pose2D;
use crate::rng::{stream, tag};
use crate::scenario::Scenario;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;

const MAX_ITERATIONS: usize = 100;
const TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntentionSet {
    pub points: Vec<(f64, f64)>,
}

impl IntentionSet {
    pub fn new(points: Vec<(f64, f64)>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::invalid("intention set", "needs at least one point"));
        }
        if points.iter().any(|p| !p.0.is_finite() || !p.1.is_finite()) {
            return Err(Error::invalid("intention set", "non-finite point"));
        }
        Ok(Self { points })
    }

    pub fn k(&self) -> usize {
        self.points.len()
    }

    /// Writes one `x y` row per point.
    pub fn save(&self, path: &Path) -> Result<()> {
        let text: String = self
            .points
            .iter()
            .map(|(x, y)| format!("{x:?} {y:?}\n"))
            .collect();
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut points = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let parse = |tok: Option<&str>, column: usize| -> Result<f64> {
                tok.and_then(|t| t.parse().ok()).ok_or_else(|| Error::Parse {
                    line: i + 1,
                    column,
                    message: format!("expected two numbers, got `{line}`"),
                })
            };
            let mut it = line.split_whitespace();
            let x = parse(it.next(), 1)?;
            let y = parse(it.next(), 2)?;
            if it.next().is_some() {
                return Err(Error::Parse {
                    line: i + 1,
                    column: 3,
                    message: "trailing fields".into(),
                });
            }
            points.push((x, y));
        }
        Self::new(points)
    }
}

fn dist2(a: (f64, f64), b: (f64, f64)) -> f64 {
    (a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)
}

fn nearest(p: (f64, f64), centers: &[(f64, f64)]) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (i, &c) in centers.iter().enumerate() {
        let d = dist2(p, c);
        if d < best_d {
            best_d = d;
            best = i;
        }
    }
    best
}

/// Lloyd's k-means with farthest-point initialization from a seeded first
/// center.
pub fn fit_intentions(endpoints: &[(f64, f64)], k: usize, seed: u64) -> Result<IntentionSet> {
    if k == 0 {
        return Err(Error::invalid("k-means", "K must be at least 1"));
    }
    if endpoints.len() < k {
        return Err(Error::invalid(
            "k-means",
            format!("{} endpoints for K = {k}", endpoints.len()),
        ));
    }
    let mut rng = stream(&[seed, tag::KMEANS]);
    let mut centers = vec![endpoints[rng.random_range(0..endpoints.len())]];
    let mut min_d: Vec<f64> = endpoints.iter().map(|&p| dist2(p, centers[0])).collect();
    while centers.len() < k {
        let (far, _) = min_d
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |acc, (i, &d)| if d > acc.1 { (i, d) } else { acc });
        let c = endpoints[far];
        centers.push(c);
        for (d, &p) in min_d.iter_mut().zip(endpoints) {
            *d = d.min(dist2(p, c));
        }
    }
    for _ in 0..MAX_ITERATIONS {
        let mut sums = vec![(0.0, 0.0, 0usize); k];
        for &p in endpoints {
            let s = &mut sums[nearest(p, &centers)];
            s.0 += p.0;
            s.1 += p.1;
            s.2 += 1;
        }
        let mut shift: f64 = 0.0;
        for (c, s) in centers.iter_mut().zip(&sums) {
            if s.2 > 0 {
                let n = (s.0 / s.2 as f64, s.1 / s.2 as f64);
                shift = shift.max(dist2(*c, n).sqrt());
                *c = n;
            }
        }
        if shift < TOLERANCE {
            break;
        }
    }
    IntentionSet::new(centers)
}

/// Agent-centric positions `horizon` frames ahead, sampled every `stride`
/// frames for every agent (CAVs included) that exists long enough.
pub fn trajectory_endpoints(s: &Scenario, horizon: usize, stride: usize) -> Vec<(f64, f64)> {
    let mut out = Vec::new();
    for a in &s.agents {
        for st in a.frames.iter().step_by(stride.max(1)) {
            if let Some(end) = a.state_at(st.frame + horizon) {
                let pose = Pose2D::new(st.x, st.y, st.yaw);
                out.push(pose.to_local(end.x, end.y));
            }
        }
    }
    out
}
