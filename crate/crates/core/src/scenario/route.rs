//! Lane routes built from straight lines and circular arcs, with exact
//! arc-length parameterization.

use crate::geometry::normalize_angle;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Segment {
    Line {
        start: (f64, f64),
        heading: f64,
        length: f64,
    },
    /// Positive `sweep` turns left (counter-clockwise).
    Arc {
        start: (f64, f64),
        heading: f64,
        radius: f64,
        sweep: f64,
    },
}

impl Segment {
    pub fn length(&self) -> f64 {
        match *self {
            Segment::Line { length, .. } => length,
            Segment::Arc { radius, sweep, .. } => radius * sweep.abs(),
        }
    }

    /// Position and heading after travelling `s` metres along the segment.
    pub fn pose_at(&self, s: f64) -> (f64, f64, f64) {
        match *self {
            Segment::Line {
                start,
                heading,
                ..
            } => {
                let (sn, cs) = heading.sin_cos();
                (start.0 + s * cs, start.1 + s * sn, heading)
            }
            Segment::Arc {
                start,
                heading,
                radius,
                sweep,
            } => {
                let sign = sweep.signum();
                let (sn, cs) = heading.sin_cos();
                let cx = start.0 - sign * radius * sn;
                let cy = start.1 + sign * radius * cs;
                let h = heading + sign * s / radius;
                let (hs, hc) = h.sin_cos();
                (cx + sign * radius * hs, cy - sign * radius * hc, normalize_angle(h))
            }
        }
    }

    pub fn end_pose(&self) -> (f64, f64, f64) {
        self.pose_at(self.length())
    }

    /// Rotates the segment about the origin.
    pub fn rotated(&self, angle: f64) -> Segment {
        let (s, c) = angle.sin_cos();
        let rot = |p: (f64, f64)| (c * p.0 - s * p.1, s * p.0 + c * p.1);
        match *self {
            Segment::Line {
                start,
                heading,
                length,
            } => Segment::Line {
                start: rot(start),
                heading: normalize_angle(heading + angle),
                length,
            },
            Segment::Arc {
                start,
                heading,
                radius,
                sweep,
            } => Segment::Arc {
                start: rot(start),
                heading: normalize_angle(heading + angle),
                radius,
                sweep,
            },
        }
    }

    /// Samples the segment every `spacing` metres, endpoints included.
    pub fn sample(&self, spacing: f64) -> Vec<[f64; 2]> {
        let len = self.length();
        let n = (len / spacing).ceil().max(1.0) as usize;
        (0..=n)
            .map(|i| {
                let (x, y, _) = self.pose_at(len * i as f64 / n as f64);
                [x, y]
            })
            .collect()
    }
}

/// A chain of segments, each driven at its own constant speed.
#[derive(Debug, Clone, PartialEq)]
pub struct Route {
    pub segments: Vec<Segment>,
    pub speeds: Vec<f64>,
}

impl Route {
    pub fn length(&self) -> f64 {
        self.segments.iter().map(Segment::length).sum()
    }

    pub fn pose_at(&self, s: f64) -> (f64, f64, f64) {
        let mut rem = s.max(0.0);
        for seg in &self.segments {
            let len = seg.length();
            if rem <= len {
                return seg.pose_at(rem);
            }
            rem -= len;
        }
        self.segments.last().map(Segment::end_pose).unwrap_or((0.0, 0.0, 0.0))
    }

    fn segment_index(&self, s: f64) -> (usize, f64) {
        let mut start = 0.0;
        for (i, seg) in self.segments.iter().enumerate() {
            let end = start + seg.length();
            if s < end {
                return (i, start);
            }
            start = end;
        }
        (self.segments.len(), start)
    }

    /// Arc length reached after driving for `t` seconds from `s0`, and the
    /// speed in effect at that moment. `None` once the route is exhausted.
    pub fn advance(&self, s0: f64, t: f64) -> Option<(f64, f64)> {
        let total = self.length();
        let mut s = s0;
        let mut remaining = t;
        loop {
            let (i, seg_start) = self.segment_index(s);
            if i >= self.segments.len() {
                return if s <= total + 1e-9 && remaining <= 0.0 {
                    Some((total, 0.0))
                } else {
                    None
                };
            }
            let v = self.speeds[i];
            let seg_end = seg_start + self.segments[i].length();
            if v <= 0.0 {
                return Some((s, 0.0));
            }
            let needed = (seg_end - s) / v;
            if remaining <= needed {
                return Some((s + v * remaining, v));
            }
            remaining -= needed;
            s = seg_end;
            if i + 1 == self.segments.len() {
                return if remaining <= 1e-12 {
                    Some((total, v))
                } else {
                    None
                };
            }
        }
    }

    /// Maximum speed along the route.
    pub fn max_speed(&self) -> f64 {
        self.speeds.iter().copied().fold(0.0, f64::max)
    }

    pub fn polyline(&self, spacing: f64) -> Vec<[f64; 2]> {
        let mut pts: Vec<[f64; 2]> = Vec::new();
        for seg in &self.segments {
            for p in seg.sample(spacing) {
                if pts.last().is_none_or(|q: &[f64; 2]| (q[0] - p[0]).hypot(q[1] - p[1]) > 1e-9) {
                    pts.push(p);
                }
            }
        }
        pts
    }
}
