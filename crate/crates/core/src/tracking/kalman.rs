//! Constant-velocity Kalman filter over `(x, y, z, yaw, l, w, h, vx, vy, vz)`.

use super::TrackerConfig;
use crate::geometry::{normalize_angle, BoundingBox3D};
use nalgebra::{SMatrix, SVector};
use std::f64::consts::PI;

pub type StateVec = SVector<f64, 10>;
pub type StateMat = SMatrix<f64, 10, 10>;
pub type ObsVec = SVector<f64, 7>;
pub type ObsMat = SMatrix<f64, 7, 7>;

#[derive(Debug, Clone, PartialEq)]
pub struct KalmanState {
    pub mean: StateVec,
    pub covariance: StateMat,
}

impl KalmanState {
    pub fn from_box(b: &BoundingBox3D, cfg: &TrackerConfig) -> Self {
        let mut mean = StateVec::zeros();
        mean.fixed_rows_mut::<7>(0).copy_from(&observation(b));
        let mut covariance = StateMat::zeros();
        for i in 0..7 {
            covariance[(i, i)] = cfg.p0_scale * cfg.r_diag[i];
        }
        for i in 7..10 {
            covariance[(i, i)] = cfg.p0_velocity;
        }
        Self { mean, covariance }
    }

    pub fn to_box(&self, score: f64) -> BoundingBox3D {
        let m = &self.mean;
        BoundingBox3D::new(
            m[0],
            m[1],
            m[2],
            m[3],
            m[4].max(0.1),
            m[5].max(0.1),
            m[6].max(0.1),
            score,
        )
    }

    pub fn velocity(&self) -> (f64, f64) {
        (self.mean[7], self.mean[8])
    }
}

pub fn observation(b: &BoundingBox3D) -> ObsVec {
    ObsVec::from([b.x, b.y, b.z, b.yaw, b.l, b.w, b.h])
}

pub fn transition(dt: f64) -> StateMat {
    let mut f = StateMat::identity();
    f[(0, 7)] = dt;
    f[(1, 8)] = dt;
    f[(2, 9)] = dt;
    f
}

pub fn observation_matrix() -> SMatrix<f64, 7, 10> {
    SMatrix::<f64, 7, 10>::identity()
}

pub fn process_noise(cfg: &TrackerConfig) -> StateMat {
    StateMat::from_diagonal(&StateVec::from(cfg.q_diag))
}

pub fn measurement_noise(cfg: &TrackerConfig) -> ObsMat {
    ObsMat::from_diagonal(&ObsVec::from(cfg.r_diag))
}

fn symmetrize(p: &StateMat) -> StateMat {
    (p + p.transpose()) * 0.5
}

/// Time update: `x <- F x`, `P <- F P F^T + Q`.
pub fn predict(s: &KalmanState, dt: f64, cfg: &TrackerConfig) -> KalmanState {
    let f = transition(dt);
    let mut mean = f * s.mean;
    mean[3] = normalize_angle(mean[3]);
    let covariance = symmetrize(&(f * s.covariance * f.transpose() + process_noise(cfg)));
    KalmanState { mean, covariance }
}

/// Measurement update with the yaw innovation wrapped into `(-pi, pi]`.
///
/// Box headings are ambiguous by half a turn, so a measured yaw more than a
/// quarter turn away from the prediction is flipped first.
pub fn update(s: &KalmanState, z: &BoundingBox3D, cfg: &TrackerConfig) -> KalmanState {
    let h = observation_matrix();
    let mut innovation = observation(z) - h * s.mean;
    let mut dyaw = normalize_angle(innovation[3]);
    if dyaw.abs() > PI / 2.0 {
        dyaw = normalize_angle(dyaw + PI);
    }
    innovation[3] = dyaw;
    let r = measurement_noise(cfg);
    let s_mat = h * s.covariance * h.transpose() + r;
    let s_inv = s_mat
        .try_inverse()
        .expect("innovation covariance is positive definite");
    let gain = s.covariance * h.transpose() * s_inv;
    let mut mean = s.mean + gain * innovation;
    mean[3] = normalize_angle(mean[3]);
    // Joseph form keeps the covariance symmetric positive definite.
    let i_kh = StateMat::identity() - gain * h;
    let covariance = symmetrize(&(i_kh * s.covariance * i_kh.transpose() + gain * r * gain.transpose()));
    KalmanState { mean, covariance }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> TrackerConfig {
        TrackerConfig::default()
    }

    fn state(vx: f64) -> KalmanState {
        let b = BoundingBox3D::new(1.0, 2.0, 0.8, 0.3, 4.5, 2.0, 1.6, 1.0);
        let mut s = KalmanState::from_box(&b, &cfg());
        s.mean[7] = vx;
        s
    }

    #[test]
    fn stationary_predict_grows_covariance() {
        let s = state(0.0);
        let p = predict(&s, 0.1, &cfg());
        assert_eq!(p.mean, s.mean);
        for i in 0..10 {
            assert!(p.covariance[(i, i)] > s.covariance[(i, i)]);
        }
    }

    #[test]
    fn linear_motion() {
        let p = predict(&state(2.0), 0.1, &cfg());
        assert!((p.mean[0] - 1.2).abs() < 1e-12);
    }

    #[test]
    fn zero_innovation_keeps_mean() {
        let s = state(1.0);
        let z = s.to_box(1.0);
        let u = update(&s, &z, &cfg());
        for i in 0..10 {
            assert!((u.mean[i] - s.mean[i]).abs() < 1e-12);
            assert!(u.covariance[(i, i)] <= s.covariance[(i, i)]);
        }
        for i in 0..7 {
            assert!(u.covariance[(i, i)] < s.covariance[(i, i)]);
        }
    }

    #[test]
    fn equal_uncertainty_gives_midpoint() {
        let c = cfg();
        let mut s = state(0.0);
        s.covariance = StateMat::zeros();
        for i in 0..7 {
            s.covariance[(i, i)] = c.r_diag[i];
        }
        for i in 7..10 {
            s.covariance[(i, i)] = 1.0;
        }
        let mut z = s.to_box(1.0);
        z.x += 2.0;
        let u = update(&s, &z, &c);
        assert!((u.mean[0] - (s.mean[0] + 1.0)).abs() < 1e-12);
    }

    #[test]
    fn yaw_wraps() {
        let s = state(0.0);
        let mut z = s.to_box(1.0);
        z.yaw += 2.0 * PI;
        let u = update(&s, &z, &cfg());
        assert!((u.mean[3] - s.mean[3]).abs() < 1e-12);
    }
}
