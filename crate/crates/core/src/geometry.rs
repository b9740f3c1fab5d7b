//! Planar poses, oriented 3D boxes and the polygon routines built on them.
//!
//! Boxes store their geometric center (not the bottom face) and a yaw about
//! the vertical axis. All yaw angles are kept in `(-pi, pi]`.

use serde::{Deserialize, Serialize};
use std::f64::consts::{PI, TAU};

/// Intersection areas below this are treated as empty.
pub const MIN_INTERSECTION_AREA: f64 = 1e-12;

/// Wraps an angle into `(-pi, pi]`.
pub fn normalize_angle(a: f64) -> f64 {
    let r = a.rem_euclid(TAU);
    if r > PI {
        r - TAU
    } else {
        r
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose2D {
    pub x: f64,
    pub y: f64,
    pub yaw: f64,
}

impl Pose2D {
    pub fn new(x: f64, y: f64, yaw: f64) -> Self {
        Self {
            x,
            y,
            yaw: normalize_angle(yaw),
        }
    }

    pub fn origin() -> Self {
        Self::new(0.0, 0.0, 0.0)
    }

    /// Maps a point given in this pose's local frame into the parent frame.
    pub fn to_parent(&self, px: f64, py: f64) -> (f64, f64) {
        let (s, c) = self.yaw.sin_cos();
        (self.x + c * px - s * py, self.y + s * px + c * py)
    }

    /// Maps a point given in the parent frame into this pose's local frame.
    pub fn to_local(&self, px: f64, py: f64) -> (f64, f64) {
        let (s, c) = self.yaw.sin_cos();
        let dx = px - self.x;
        let dy = py - self.y;
        (c * dx + s * dy, -s * dx + c * dy)
    }

    pub fn distance_to(&self, x: f64, y: f64) -> f64 {
        (self.x - x).hypot(self.y - y)
    }
}

/// Oriented 3D box `(x, y, z, yaw, l, w, h)` plus a confidence score.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox3D {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub yaw: f64,
    pub l: f64,
    pub w: f64,
    pub h: f64,
    pub score: f64,
}

impl BoundingBox3D {
    #[allow(clippy::too_many_arguments)]
    pub fn new(x: f64, y: f64, z: f64, yaw: f64, l: f64, w: f64, h: f64, score: f64) -> Self {
        Self {
            x,
            y,
            z,
            yaw: normalize_angle(yaw),
            l,
            w,
            h,
            score,
        }
    }

    pub fn is_valid(&self) -> bool {
        let finite = [self.x, self.y, self.z, self.yaw, self.l, self.w, self.h, self.score]
            .iter()
            .all(|v| v.is_finite());
        finite && self.l > 0.0 && self.w > 0.0 && self.h > 0.0 && (0.0..=1.0).contains(&self.score)
    }

    pub fn with_score(mut self, score: f64) -> Self {
        self.score = score;
        self
    }

    pub fn center(&self) -> (f64, f64) {
        (self.x, self.y)
    }

    pub fn center_distance(&self, other: &BoundingBox3D) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    /// Ground-plane footprint, counter-clockwise.
    pub fn footprint(&self) -> [(f64, f64); 4] {
        let (s, c) = self.yaw.sin_cos();
        let hl = self.l / 2.0;
        let hw = self.w / 2.0;
        let corner = |dx: f64, dy: f64| (self.x + c * dx - s * dy, self.y + s * dx + c * dy);
        [
            corner(hl, -hw),
            corner(hl, hw),
            corner(-hl, hw),
            corner(-hl, -hw),
        ]
    }

    pub fn volume(&self) -> f64 {
        self.l * self.w * self.h
    }

    fn z_range(&self) -> (f64, f64) {
        (self.z - self.h / 2.0, self.z + self.h / 2.0)
    }
}

/// Re-expresses a box given in the `sender` frame in the `receiver` frame.
///
/// Both poses live in a common parent frame. Extents, `z` and score are
/// carried over untouched.
pub fn transform_box(b: &BoundingBox3D, sender: &Pose2D, receiver: &Pose2D) -> BoundingBox3D {
    let (wx, wy) = sender.to_parent(b.x, b.y);
    let (lx, ly) = receiver.to_local(wx, wy);
    BoundingBox3D {
        x: lx,
        y: ly,
        yaw: normalize_angle(b.yaw + sender.yaw - receiver.yaw),
        ..*b
    }
}

/// Signed shoelace area; positive for counter-clockwise rings.
pub fn signed_area(poly: &[(f64, f64)]) -> f64 {
    if poly.len() < 3 {
        return 0.0;
    }
    let mut acc = 0.0;
    for i in 0..poly.len() {
        let (x0, y0) = poly[i];
        let (x1, y1) = poly[(i + 1) % poly.len()];
        acc += x0 * y1 - x1 * y0;
    }
    acc / 2.0
}

fn cross(o: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0)
}

/// Sutherland-Hodgman clipping of `subject` by the convex counter-clockwise
/// polygon `clip`.
pub fn clip_convex(subject: &[(f64, f64)], clip: &[(f64, f64)]) -> Vec<(f64, f64)> {
    let mut output: Vec<(f64, f64)> = subject.to_vec();
    for i in 0..clip.len() {
        if output.is_empty() {
            break;
        }
        let a = clip[i];
        let b = clip[(i + 1) % clip.len()];
        let input = std::mem::take(&mut output);
        for j in 0..input.len() {
            let cur = input[j];
            let prev = input[(j + input.len() - 1) % input.len()];
            let cur_in = cross(a, b, cur) >= 0.0;
            let prev_in = cross(a, b, prev) >= 0.0;
            if cur_in {
                if !prev_in {
                    output.push(line_intersection(prev, cur, a, b));
                }
                output.push(cur);
            } else if prev_in {
                output.push(line_intersection(prev, cur, a, b));
            }
        }
    }
    output
}

fn line_intersection(p: (f64, f64), q: (f64, f64), a: (f64, f64), b: (f64, f64)) -> (f64, f64) {
    let d1 = (q.0 - p.0, q.1 - p.1);
    let d2 = (b.0 - a.0, b.1 - a.1);
    let denom = d1.0 * d2.1 - d1.1 * d2.0;
    if denom.abs() < 1e-300 {
        return q;
    }
    let t = ((a.0 - p.0) * d2.1 - (a.1 - p.1) * d2.0) / denom;
    (p.0 + t * d1.0, p.1 + t * d1.1)
}

/// Area of the ground-plane overlap of two boxes.
pub fn bev_intersection_area(a: &BoundingBox3D, b: &BoundingBox3D) -> f64 {
    // Cheap reject on circumscribed circles.
    let ra = a.l.hypot(a.w) / 2.0;
    let rb = b.l.hypot(b.w) / 2.0;
    if a.center_distance(b) > ra + rb {
        return 0.0;
    }
    let poly = clip_convex(&a.footprint(), &b.footprint());
    let area = signed_area(&poly).abs();
    if area < MIN_INTERSECTION_AREA {
        0.0
    } else {
        area
    }
}

/// Ground-plane IoU.
pub fn iou_bev(a: &BoundingBox3D, b: &BoundingBox3D) -> f64 {
    let inter = bev_intersection_area(a, b);
    if inter == 0.0 {
        return 0.0;
    }
    let union = a.l * a.w + b.l * b.w - inter;
    (inter / union).clamp(0.0, 1.0)
}

/// Volumetric IoU: yaw-aware footprint overlap times vertical overlap.
pub fn iou_3d(a: &BoundingBox3D, b: &BoundingBox3D) -> f64 {
    let (a0, a1) = a.z_range();
    let (b0, b1) = b.z_range();
    let dz = a1.min(b1) - a0.max(b0);
    if dz <= 0.0 {
        return 0.0;
    }
    let area = bev_intersection_area(a, b);
    if area == 0.0 {
        return 0.0;
    }
    let inter = area * dz;
    let union = a.volume() + b.volume() - inter;
    (inter / union).clamp(0.0, 1.0)
}

/// True when the open segment `p -> q` passes through the interior of the
/// convex counter-clockwise polygon.
pub fn segment_intersects_convex(p: (f64, f64), q: (f64, f64), poly: &[(f64, f64)]) -> bool {
    let d = (q.0 - p.0, q.1 - p.1);
    let mut t_enter = 0.0_f64;
    let mut t_exit = 1.0_f64;
    for i in 0..poly.len() {
        let a = poly[i];
        let b = poly[(i + 1) % poly.len()];
        // Outward normal of a CCW edge.
        let n = (b.1 - a.1, a.0 - b.0);
        let num = n.0 * (p.0 - a.0) + n.1 * (p.1 - a.1);
        let den = n.0 * d.0 + n.1 * d.1;
        if den.abs() < 1e-15 {
            if num >= 0.0 {
                return false;
            }
            continue;
        }
        let t = -num / den;
        if den < 0.0 {
            t_enter = t_enter.max(t);
        } else {
            t_exit = t_exit.min(t);
        }
        if t_enter >= t_exit {
            return false;
        }
    }
    t_exit - t_enter > 1e-12
}

/// Convex hull by the monotone-chain method, counter-clockwise, without
/// collinear points.
pub fn convex_hull(points: &[(f64, f64)]) -> Vec<(f64, f64)> {
    let mut pts: Vec<(f64, f64)> = points.to_vec();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let mut lower: Vec<(f64, f64)> = Vec::with_capacity(pts.len());
    for &p in &pts {
        while lower.len() >= 2 && cross(lower[lower.len() - 2], lower[lower.len() - 1], p) <= 0.0 {
            lower.pop();
        }
        lower.push(p);
    }
    let mut upper: Vec<(f64, f64)> = Vec::with_capacity(pts.len());
    for &p in pts.iter().rev() {
        while upper.len() >= 2 && cross(upper[upper.len() - 2], upper[upper.len() - 1], p) <= 0.0 {
            upper.pop();
        }
        upper.push(p);
    }
    lower.pop();
    upper.pop();
    lower.extend(upper);
    lower
}

/// Distance from a point to a segment.
pub fn point_segment_distance(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let d = (b.0 - a.0, b.1 - a.1);
    let len2 = d.0 * d.0 + d.1 * d.1;
    let t = if len2 > 0.0 {
        (((p.0 - a.0) * d.0 + (p.1 - a.1) * d.1) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    (p.0 - (a.0 + t * d.0)).hypot(p.1 - (a.1 + t * d.1))
}
