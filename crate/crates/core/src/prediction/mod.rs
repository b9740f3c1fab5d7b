//! Multi-modal trajectory prediction. Each intention point yields one mode:
//! a constant-speed arc from the agent's estimated state that bends toward
//! the intention point, wrapped in Gaussians whose spread grows with the
//! horizon. Mode weights favour modes that agree with the observed turn
//! rate and stay near lane centers.

mod intentions;
mod score;

pub use intentions::{fit_intentions, trajectory_endpoints, IntentionSet};
pub use score::{prediction_score, PredictionScore};

use crate::error::{Error, Result};
use crate::geometry::{normalize_angle, point_segment_distance, BoundingBox3D, Pose2D};
use crate::gmm::{GmmComponent, GmmStep, GmmTrajectory};
use crate::scenario::{MapPolyline, PolylineKind, FUTURE_FRAMES};
use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use std::f64::consts::FRAC_PI_2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PredictorConfig {
    /// Number of intention points (modes).
    pub k: usize,
    pub t_f: usize,
    pub dt: f64,
    pub sigma0: f64,
    pub sigma_growth: f64,
    pub temperature: f64,
    pub heading_weight: f64,
    pub lane_weight: f64,
    /// Lane-distance scale of the lane term, metres.
    pub lane_scale: f64,
    /// Fraction of each mode's speed taken from its intention point's
    /// implied speed rather than the observed speed.
    pub speed_blend: f64,
    /// Agents slower than this are treated as stationary.
    pub min_speed: f64,
    /// Ratio of along-heading to cross-heading spread; 1 is isotropic.
    pub anisotropy: f64,
}

impl Default for PredictorConfig {
    fn default() -> Self {
        Self {
            k: 6,
            t_f: FUTURE_FRAMES,
            dt: crate::scenario::DEFAULT_DT,
            sigma0: 0.3,
            sigma_growth: 0.04,
            temperature: 0.5,
            heading_weight: 1.0,
            lane_weight: 1.0,
            lane_scale: 2.0,
            speed_blend: 0.3,
            min_speed: 0.5,
            anisotropy: 1.0,
        }
    }
}

impl PredictorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || self.t_f == 0 {
            return Err(Error::invalid("predictor config", "k and t_f must be at least 1"));
        }
        if !(self.sigma0 > 0.0) || !(self.sigma_growth >= 0.0) {
            return Err(Error::invalid("predictor config", "sigma0 > 0 and sigma_growth >= 0 required"));
        }
        if !(self.dt > 0.0) || !(self.temperature > 0.0) || !(self.lane_scale > 0.0) {
            return Err(Error::invalid("predictor config", "dt, temperature and lane_scale must be positive"));
        }
        if !(0.0..=1.0).contains(&self.speed_blend) || !(self.anisotropy > 0.0) {
            return Err(Error::invalid("predictor config", "speed_blend in [0, 1] and anisotropy > 0 required"));
        }
        Ok(())
    }

    pub fn sigma_at(&self, step: usize) -> f64 {
        self.sigma0 + self.sigma_growth * step as f64
    }
}

/// Kinematic state estimated from a short box history.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MotionEstimate {
    pub x: f64,
    pub y: f64,
    pub heading: f64,
    pub speed: f64,
    pub yaw_rate: f64,
}

/// Least-squares fit over `(frame, box)` samples, newest last.
pub fn estimate_motion(history: &[(usize, BoundingBox3D)], dt: f64, min_speed: f64) -> Result<MotionEstimate> {
    let Some(&(last_frame, last)) = history.last() else {
        return Err(Error::invalid("history", "empty"));
    };
    let n = history.len();
    let ts: Vec<f64> = history
        .iter()
        .map(|(f, _)| (*f as f64 - last_frame as f64) * dt)
        .collect();
    let (mut x, mut y, mut vx, mut vy) = (last.x, last.y, 0.0, 0.0);
    if n >= 2 {
        let tm = ts.iter().sum::<f64>() / n as f64;
        let xm = history.iter().map(|(_, b)| b.x).sum::<f64>() / n as f64;
        let ym = history.iter().map(|(_, b)| b.y).sum::<f64>() / n as f64;
        let stt: f64 = ts.iter().map(|t| (t - tm).powi(2)).sum();
        if stt > 0.0 {
            vx = ts.iter().zip(history).map(|(t, (_, b))| (t - tm) * (b.x - xm)).sum::<f64>() / stt;
            vy = ts.iter().zip(history).map(|(t, (_, b))| (t - tm) * (b.y - ym)).sum::<f64>() / stt;
            x = xm - vx * tm;
            y = ym - vy * tm;
        }
    }
    let speed = vx.hypot(vy);
    if speed < min_speed {
        return Ok(MotionEstimate {
            x: last.x,
            y: last.y,
            heading: last.yaw,
            speed: 0.0,
            yaw_rate: 0.0,
        });
    }
    let mut yaw_rate = 0.0;
    if n >= 5 {
        // Quadratic fit for acceleration.
        let mut a = Matrix3::zeros();
        let mut bx = Vector3::zeros();
        let mut by = Vector3::zeros();
        for (t, (_, b)) in ts.iter().zip(history) {
            let phi = Vector3::new(1.0, *t, t * t);
            a += phi * phi.transpose();
            bx += phi * b.x;
            by += phi * b.y;
        }
        if let Some(inv) = a.try_inverse() {
            let cx = inv * bx;
            let cy = inv * by;
            let (qvx, qvy) = (cx[1], cy[1]);
            let (ax, ay) = (2.0 * cx[2], 2.0 * cy[2]);
            let v2 = qvx * qvx + qvy * qvy;
            if v2 > min_speed * min_speed {
                yaw_rate = ((qvx * ay - qvy * ax) / v2).clamp(-0.8, 0.8);
            }
        }
    }
    Ok(MotionEstimate {
        x,
        y,
        heading: vy.atan2(vx),
        speed,
        yaw_rate,
    })
}

/// Positions (agent frame) of one mode at steps `1..=t_f`, plus the heading
/// reached after each step.
fn rollout(target: (f64, f64), speed: f64, cfg: &PredictorConfig) -> Vec<(f64, f64, f64)> {
    let (tx, ty) = target;
    let r2 = tx * tx + ty * ty;
    let kappa = if r2 > 1e-6 { 2.0 * ty / r2 } else { 0.0 };
    // Heading at the target along the circle through it is 2 * alpha.
    let alpha = ty.atan2(tx.max(1e-9));
    let cap = (2.0 * alpha).abs().min(FRAC_PI_2 + 0.3);
    let d = speed * cfg.dt;
    let (mut x, mut y, mut th) = (0.0, 0.0, 0.0_f64);
    let mut out = Vec::with_capacity(cfg.t_f);
    for _ in 0..cfg.t_f {
        let mut dth = kappa * d;
        let room = cap - th.abs();
        if room <= 0.0 {
            dth = 0.0;
        } else if dth.abs() > room {
            dth = room * dth.signum();
        }
        let mid = th + dth / 2.0;
        x += d * mid.cos();
        y += d * mid.sin();
        th += dth;
        out.push((x, y, th));
    }
    out
}

/// Speed implied by reaching `target` along the arc in the full horizon.
fn implied_speed(target: (f64, f64), cfg: &PredictorConfig) -> f64 {
    let (tx, ty) = target;
    let chord = tx.hypot(ty);
    let alpha = ty.atan2(tx.max(1e-9)).abs();
    let arc = if alpha < 1e-6 { chord } else { chord * alpha / alpha.sin() };
    arc / (cfg.t_f as f64 * cfg.dt)
}

fn lane_distance(p: (f64, f64), lanes: &[&MapPolyline]) -> f64 {
    lanes
        .iter()
        .flat_map(|l| l.segments())
        .map(|(a, b)| point_segment_distance(p, a, b))
        .fold(f64::INFINITY, f64::min)
}

fn component(p: f64, mu: (f64, f64), sigma: f64, heading: f64, anisotropy: f64) -> GmmComponent {
    if anisotropy == 1.0 {
        return GmmComponent::isotropic(p, mu.0, mu.1, sigma);
    }
    let along = sigma * anisotropy;
    let (s, c) = heading.sin_cos();
    let sxx = c * c * along * along + s * s * sigma * sigma;
    let syy = s * s * along * along + c * c * sigma * sigma;
    let sxy = c * s * (along * along - sigma * sigma);
    let (sx, sy) = (sxx.sqrt(), syy.sqrt());
    GmmComponent {
        p,
        mu_x: mu.0,
        mu_y: mu.1,
        sigma_x: sx,
        sigma_y: sy,
        rho: (sxy / (sx * sy)).clamp(-0.999_999, 0.999_999),
    }
}

/// Forecasts one agent from its box history (oldest first).
pub fn predict_agent(
    agent_id: u64,
    frame: usize,
    history: &[(usize, BoundingBox3D)],
    map: &[MapPolyline],
    intentions: &IntentionSet,
    cfg: &PredictorConfig,
) -> Result<GmmTrajectory> {
    let est = estimate_motion(history, cfg.dt, cfg.min_speed)?;
    let pose = Pose2D::new(est.x, est.y, est.heading);
    let lanes: Vec<&MapPolyline> = map.iter().filter(|m| m.kind == PolylineKind::LaneCenter).collect();
    let expected_turn = est.yaw_rate * 1.0;
    let check_step = ((1.0 / cfg.dt).round() as usize).clamp(1, cfg.t_f);

    let mut modes: Vec<Vec<(f64, f64, f64)>> = Vec::with_capacity(intentions.k());
    let mut logits = Vec::with_capacity(intentions.k());
    for &target in &intentions.points {
        let speed = if est.speed == 0.0 {
            0.0
        } else {
            (1.0 - cfg.speed_blend) * est.speed + cfg.speed_blend * implied_speed(target, cfg)
        };
        let local = rollout(target, speed, cfg);
        let world: Vec<(f64, f64, f64)> = local
            .iter()
            .map(|&(x, y, th)| {
                let (wx, wy) = pose.to_parent(x, y);
                (wx, wy, normalize_angle(th + est.heading))
            })
            .collect();
        let align = if est.speed == 0.0 {
            0.0
        } else {
            (local[check_step - 1].2 - expected_turn).cos()
        };
        let lane = if lanes.is_empty() {
            0.0
        } else {
            let samples: Vec<f64> = world
                .iter()
                .skip(check_step - 1)
                .step_by(check_step)
                .map(|&(x, y, _)| lane_distance((x, y), &lanes))
                .collect();
            -samples.iter().sum::<f64>() / samples.len() as f64 / cfg.lane_scale
        };
        logits.push((cfg.heading_weight * align + cfg.lane_weight * lane) / cfg.temperature);
        modes.push(world);
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    let weights: Vec<f64> = exps.iter().map(|e| e / total).collect();

    let steps = (0..cfg.t_f)
        .map(|s| GmmStep {
            components: modes
                .iter()
                .zip(&weights)
                .map(|(m, &p)| {
                    let (x, y, th) = m[s];
                    component(p, (x, y), cfg.sigma_at(s + 1), th, cfg.anisotropy)
                })
                .collect(),
        })
        .collect();
    GmmTrajectory::new(agent_id, frame, steps)
}

/// Mean trajectory of every component.
pub fn modes_of(g: &GmmTrajectory) -> Vec<Vec<(f64, f64)>> {
    (0..g.k()).map(|k| g.mode(k)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn history_line(v: f64, n: usize) -> Vec<(usize, BoundingBox3D)> {
        (0..n)
            .map(|i| {
                let x = v * i as f64 * 0.1;
                (i, BoundingBox3D::new(x, 0.0, 0.8, 0.0, 4.5, 2.0, 1.6, 1.0))
            })
            .collect()
    }

    fn intentions() -> IntentionSet {
        IntentionSet::new(vec![(40.0, 0.0), (15.0, 12.0), (15.0, -8.0), (0.0, 0.0), (25.0, 0.5), (60.0, 0.0)]).unwrap()
    }

    #[test]
    fn stationary_stays_put() {
        let h = history_line(0.0, 10);
        let g = predict_agent(1, 9, &h, &[], &intentions(), &PredictorConfig::default()).unwrap();
        for m in modes_of(&g) {
            let (x, y) = *m.last().unwrap();
            assert!(x.hypot(y) < 1.0);
        }
    }

    #[test]
    fn straight_history_follows_lane() {
        let v = 8.0;
        let h = history_line(v, 10);
        let map = vec![MapPolyline {
            kind: PolylineKind::LaneCenter,
            points: vec![[-100.0, 0.0], [200.0, 0.0]],
        }];
        let set = IntentionSet::new(vec![(40.0, 0.0), (15.0, 12.0), (15.0, -8.0)]).unwrap();
        let g = predict_agent(1, 9, &h, &map, &set, &PredictorConfig::default()).unwrap();
        let w = g.weights();
        let best = (0..w.len()).max_by(|&a, &b| w[a].total_cmp(&w[b])).unwrap();
        let (x, y) = *g.mode(best).last().unwrap();
        let expected = 0.9 * v + v * 5.0;
        assert!((x - expected).abs() < 1.0 && y.abs() < 1.0, "{x} {y}");
    }

    #[test]
    fn weights_normalized_and_sigma_grows() {
        let h = history_line(6.0, 7);
        let g = predict_agent(1, 6, &h, &[], &intentions(), &PredictorConfig::default()).unwrap();
        for s in &g.steps {
            assert!((s.weight_sum() - 1.0).abs() < 1e-9);
        }
        for w in g.steps.windows(2) {
            assert!(w[1].components[0].sigma_x >= w[0].components[0].sigma_x);
        }
    }

    #[test]
    fn empty_history_rejected() {
        assert!(predict_agent(1, 0, &[], &[], &intentions(), &PredictorConfig::default()).is_err());
    }
}
