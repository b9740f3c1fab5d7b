//! Surrogate per-CAV detector and detection-level cooperative fusion.
//!
//! Detections are expressed in the sensing CAV's local frame. Received
//! evidence is brought into the ego frame with [`DetectionEvidence::aligned_to`]
//! before [`fuse_detections`].

use crate::error::{Error, Result};
use crate::geometry::{iou_3d, normalize_angle, segment_intersects_convex, transform_box, BoundingBox3D, Pose2D};
use crate::rng::{stream, tag};
use crate::scenario::FrameTruth;
use rand::Rng;
use rand_distr::{Distribution, Normal, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// IoU at or above which boxes from different sources are merged.
pub const MERGE_IOU: f64 = 0.3;
/// Score multiplier applied per frame of staleness to received evidence.
pub const STALE_DISCOUNT: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SensorConfig {
    pub max_range: f64,
    /// Center noise at zero range, metres.
    pub sigma_pos: f64,
    /// Additional center noise per metre of range.
    pub sigma_pos_slope: f64,
    pub sigma_yaw: f64,
    pub sigma_dim: f64,
    pub miss_rate_base: f64,
    pub miss_rate_slope: f64,
    pub fp_rate: f64,
    /// Relative spread of true-positive scores below `1 - miss_rate(range)`.
    pub score_jitter: f64,
    /// Quantization noise at 256x compression is `compression_sigma0`.
    pub compression_sigma0: f64,
    /// Nominal BEV feature map `[H, W, C]` of 4-byte floats.
    pub feature_shape: [u64; 3],
    /// Metres per BEV cell; with `feature_shape` this fixes the area a CAV
    /// can represent around itself.
    pub bev_resolution: f64,
}

impl Default for SensorConfig {
    fn default() -> Self {
        Self {
            max_range: 50.0,
            sigma_pos: 0.05,
            sigma_pos_slope: 0.004,
            sigma_yaw: 0.02,
            sigma_dim: 0.05,
            miss_rate_base: 0.02,
            miss_rate_slope: 0.004,
            fp_rate: 0.5,
            score_jitter: 0.3,
            compression_sigma0: 0.1,
            feature_shape: [250, 250, 128],
            bev_resolution: 0.4,
        }
    }
}

impl SensorConfig {
    pub fn validate(&self) -> Result<()> {
        let rates = [self.miss_rate_base, self.miss_rate_slope, self.score_jitter];
        if rates.iter().any(|r| !(0.0..=1.0).contains(r)) {
            return Err(Error::invalid("sensor config", "rates must lie in [0, 1]"));
        }
        let sigmas = [
            self.sigma_pos,
            self.sigma_pos_slope,
            self.sigma_yaw,
            self.sigma_dim,
            self.compression_sigma0,
            self.fp_rate,
        ];
        if sigmas.iter().any(|s| !(*s >= 0.0) || !s.is_finite()) {
            return Err(Error::invalid("sensor config", "noise parameters must be finite and >= 0"));
        }
        if !(self.max_range > 0.0) {
            return Err(Error::invalid("sensor config", "max_range must be positive"));
        }
        if !(self.bev_resolution > 0.0) || !self.bev_resolution.is_finite() {
            return Err(Error::invalid("sensor config", "bev_resolution must be positive"));
        }
        if self.feature_shape.iter().any(|&d| d == 0) {
            return Err(Error::invalid("sensor config", "feature_shape entries must be positive"));
        }
        Ok(())
    }

    pub fn miss_rate(&self, range: f64) -> f64 {
        (self.miss_rate_base + self.miss_rate_slope * range).clamp(0.0, 1.0)
    }

    /// Std of the center perturbation caused by compressing at `ratio`.
    pub fn compression_sigma(&self, ratio: f64) -> f64 {
        self.compression_sigma0 * ratio.max(1.0).log2() / 8.0
    }

    /// Half extents `(x, y)` of the BEV grid centred on a CAV, metres.
    pub fn bev_half_extent(&self) -> (f64, f64) {
        let [h, w, _] = self.feature_shape;
        (w as f64 * self.bev_resolution / 2.0, h as f64 * self.bev_resolution / 2.0)
    }

    pub fn feature_bytes(&self) -> f64 {
        let [h, w, c] = self.feature_shape;
        (h * w * c * 4) as f64
    }
}

/// What one CAV shares about one frame: its detections (local frame), its
/// pose, and the size the equivalent BEV feature map would have on the wire.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionEvidence {
    pub sender: u64,
    pub frame: usize,
    pub pose: Pose2D,
    pub boxes: Vec<BoundingBox3D>,
    pub nominal_feature_bytes: f64,
}

impl DetectionEvidence {
    /// Re-expresses the boxes in the local frame of `receiver`.
    pub fn aligned_to(&self, receiver: &Pose2D) -> DetectionEvidence {
        DetectionEvidence {
            boxes: self
                .boxes
                .iter()
                .map(|b| transform_box(b, &self.pose, receiver))
                .collect(),
            pose: *receiver,
            ..self.clone()
        }
    }

    /// Drops boxes whose centre falls outside the local BEV grid; warped
    /// remote features beyond it have nowhere to go.
    pub fn cropped_to_grid(mut self, cfg: &SensorConfig) -> DetectionEvidence {
        let (hx, hy) = cfg.bev_half_extent();
        self.boxes.retain(|b| b.x.abs() <= hx && b.y.abs() <= hy);
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusedDetections {
    pub ego: u64,
    pub frame: usize,
    pub boxes: Vec<BoundingBox3D>,
}

/// True iff `target` is within range and no box in `others` blocks the
/// sight line from the CAV to the target center.
pub fn visible(cav: &Pose2D, target: &BoundingBox3D, others: &[BoundingBox3D], max_range: f64) -> bool {
    if cav.distance_to(target.x, target.y) > max_range {
        return false;
    }
    let p = (cav.x, cav.y);
    let q = (target.x, target.y);
    !others
        .iter()
        .any(|o| segment_intersects_convex(p, q, &o.footprint()))
}

/// Simulates the detector of CAV `cav_id` on one frame of ground truth.
///
/// Random draws are made for every ground-truth box whether or not it is
/// visible, so toggling one target's visibility leaves the rest unchanged.
pub fn sense_local(cav_id: u64, truth: &FrameTruth, cfg: &SensorConfig, seed: u64) -> Result<DetectionEvidence> {
    let pose = *truth
        .cav_poses
        .get(&cav_id)
        .ok_or_else(|| Error::invalid("sensing", format!("CAV {cav_id} absent at frame {}", truth.frame)))?;
    let mut rng = stream(&[seed, tag::SENSE]);
    let world = Pose2D::origin();
    let mut boxes = Vec::new();
    for (id, gt) in &truth.boxes {
        let u_miss: f64 = rng.random();
        let u_score: f64 = rng.random();
        let n: [f64; 6] = std::array::from_fn(|_| StandardNormal.sample(&mut rng));
        if *id == cav_id {
            continue;
        }
        let others: Vec<BoundingBox3D> = truth
            .boxes
            .iter()
            .filter(|(o, _)| o != id && *o != cav_id)
            .map(|(_, b)| *b)
            .collect();
        if !visible(&pose, gt, &others, cfg.max_range) {
            continue;
        }
        let range = pose.distance_to(gt.x, gt.y);
        let miss = cfg.miss_rate(range);
        if u_miss < miss {
            continue;
        }
        let local = transform_box(gt, &world, &pose);
        let sp = cfg.sigma_pos + cfg.sigma_pos_slope * range;
        let score = ((1.0 - miss) * (1.0 - cfg.score_jitter * u_score)).clamp(0.01, 1.0);
        boxes.push(BoundingBox3D::new(
            local.x + sp * n[0],
            local.y + sp * n[1],
            local.z,
            local.yaw + cfg.sigma_yaw * n[2],
            (local.l + cfg.sigma_dim * n[3]).max(0.5),
            (local.w + cfg.sigma_dim * n[4]).max(0.5),
            (local.h + cfg.sigma_dim * n[5]).max(0.5),
            score,
        ));
    }
    if cfg.fp_rate > 0.0 {
        let count = Poisson::new(cfg.fp_rate)
            .map_err(|e| Error::invalid("sensor config", e.to_string()))?
            .sample(&mut rng) as usize;
        for _ in 0..count {
            let r = cfg.max_range * rng.random::<f64>().sqrt();
            let a = rng.random_range(-PI..PI);
            let yaw = rng.random_range(-PI..PI);
            let score = rng.random_range(0.05..0.5);
            boxes.push(BoundingBox3D::new(r * a.cos(), r * a.sin(), 0.8, yaw, 4.5, 2.0, 1.6, score));
        }
    }
    Ok(DetectionEvidence {
        sender: cav_id,
        frame: truth.frame,
        pose,
        boxes,
        nominal_feature_bytes: cfg.feature_bytes(),
    })
}

/// Models lossy compression of the shared features: the payload shrinks by
/// `ratio` and box centers pick up Gaussian quantization noise.
pub fn quantize_evidence(e: &DetectionEvidence, ratio: f64, cfg: &SensorConfig, seed: u64) -> Result<DetectionEvidence> {
    if !(ratio >= 1.0) || !ratio.is_finite() {
        return Err(Error::invalid("compression ratio", format!("{ratio} < 1")));
    }
    let sigma = cfg.compression_sigma(ratio);
    let mut out = e.clone();
    out.nominal_feature_bytes = e.nominal_feature_bytes / ratio;
    if sigma > 0.0 {
        let normal = Normal::new(0.0, sigma).map_err(|err| Error::invalid("compression sigma", err.to_string()))?;
        let mut rng = stream(&[seed, tag::QUANTIZE]);
        for b in &mut out.boxes {
            b.x += normal.sample(&mut rng);
            b.y += normal.sample(&mut rng);
        }
    }
    Ok(out)
}

struct Cluster {
    /// `(source, index)` of the first member, used for output order.
    first: (usize, usize),
    sources: Vec<usize>,
    members: Vec<BoundingBox3D>,
    fused: BoundingBox3D,
}

fn fuse_members(members: &[BoundingBox3D]) -> BoundingBox3D {
    if members.len() == 1 {
        return members[0];
    }
    let wsum: f64 = members.iter().map(|b| b.score.max(1e-9)).sum();
    let avg = |f: fn(&BoundingBox3D) -> f64| members.iter().map(|b| b.score.max(1e-9) * f(b)).sum::<f64>() / wsum;
    // Circular mean keeps opposite-looking yaws from cancelling to garbage;
    // box headings are ambiguous modulo pi, so average doubled angles.
    let reference = members[0].yaw;
    let (s, c) = members.iter().fold((0.0, 0.0), |(s, c), b| {
        let d = normalize_angle(b.yaw - reference);
        let d = if d.abs() > PI / 2.0 { normalize_angle(d + PI) } else { d };
        let w = b.score.max(1e-9);
        (s + w * d.sin(), c + w * d.cos())
    });
    let miss = members.iter().fold(1.0, |acc, b| acc * (1.0 - b.score));
    BoundingBox3D::new(
        avg(|b| b.x),
        avg(|b| b.y),
        avg(|b| b.z),
        reference + s.atan2(c),
        avg(|b| b.l),
        avg(|b| b.w),
        avg(|b| b.h),
        (1.0 - miss).clamp(0.0, 1.0),
    )
}

/// Merges the ego's evidence with evidence received from other CAVs (already
/// aligned to the ego frame).
///
/// Boxes are visited in descending score order and each joins the cluster
/// whose fused box overlaps it most (IoU >= [`MERGE_IOU`]), provided that
/// cluster holds nothing from the same source yet. Each cluster becomes one
/// score-weighted box with score `1 - prod(1 - s_i)`. Evidence older than
/// the ego's frame has its scores scaled by [`STALE_DISCOUNT`] per frame.
pub fn fuse_detections(ego: &DetectionEvidence, received: &[DetectionEvidence]) -> FusedDetections {
    let discounted: Vec<DetectionEvidence> = received
        .iter()
        .map(|e| {
            let stale = ego.frame.saturating_sub(e.frame);
            if stale == 0 {
                return e.clone();
            }
            let f = STALE_DISCOUNT.powi(stale.min(64) as i32);
            let mut d = e.clone();
            d.boxes.iter_mut().for_each(|b| b.score *= f);
            d
        })
        .collect();
    let sources: Vec<&DetectionEvidence> = std::iter::once(ego).chain(discounted.iter()).collect();
    let mut order: Vec<(usize, usize)> = sources
        .iter()
        .enumerate()
        .flat_map(|(s, e)| (0..e.boxes.len()).map(move |i| (s, i)))
        .collect();
    order.sort_by(|a, b| {
        let sa = sources[a.0].boxes[a.1].score;
        let sb = sources[b.0].boxes[b.1].score;
        sb.total_cmp(&sa).then(a.cmp(b))
    });
    let mut clusters: Vec<Cluster> = Vec::new();
    for (s, i) in order {
        let b = sources[s].boxes[i];
        let best = clusters
            .iter()
            .enumerate()
            .filter(|(_, c)| !c.sources.contains(&s))
            .map(|(ci, c)| (ci, iou_3d(&c.fused, &b)))
            .filter(|&(_, iou)| iou >= MERGE_IOU)
            .max_by(|a, b| a.1.total_cmp(&b.1).then(b.0.cmp(&a.0)));
        match best {
            Some((ci, _)) => {
                let c = &mut clusters[ci];
                c.sources.push(s);
                c.members.push(b);
                c.first = c.first.min((s, i));
                c.fused = fuse_members(&c.members);
            }
            None => clusters.push(Cluster {
                first: (s, i),
                sources: vec![s],
                members: vec![b],
                fused: b,
            }),
        }
    }
    clusters.sort_by_key(|c| c.first);
    FusedDetections {
        ego: ego.sender,
        frame: ego.frame,
        boxes: clusters.into_iter().map(|c| c.fused).collect(),
    }
}
