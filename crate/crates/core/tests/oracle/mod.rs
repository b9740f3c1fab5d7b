//! Randomized equivalence suites: each pits a library routine against an
//! independent, deliberately naive reimplementation. Shared with the
//! acceptance harness, which runs the same suites and reports them.

#![allow(dead_code)]

use coopsim_core::geometry::{iou_3d, BoundingBox3D};
use coopsim_core::gmm::{gmm_density, GmmComponent, GmmStep, GmmTrajectory};
use coopsim_core::metrics::{hull_area, prediction_ade_fde};
use coopsim_core::prediction::prediction_score;
use coopsim_core::tracking::kalman::{self, KalmanState};
use coopsim_core::tracking::{associate, TrackerConfig};
use proptest::prelude::*;
use proptest::test_runner::{Config, RngAlgorithm, TestCaseError, TestRng, TestRunner};
use std::f64::consts::PI;

pub const CASES: u32 = 1000;

fn runner(cases: u32) -> TestRunner {
    TestRunner::new_with_rng(
        Config {
            cases,
            failure_persistence: None,
            ..Config::default()
        },
        TestRng::deterministic_rng(RngAlgorithm::ChaCha),
    )
}

fn finish(r: Result<(), proptest::test_runner::TestError<impl std::fmt::Debug>>, cases: u32) -> Result<u32, String> {
    r.map(|_| cases).map_err(|e| e.to_string())
}

fn close(a: f64, b: f64, tol: f64, what: &str) -> Result<(), TestCaseError> {
    if (a - b).abs() <= tol {
        Ok(())
    } else {
        Err(TestCaseError::fail(format!("{what}: {a} vs {b} (tol {tol})")))
    }
}

fn arb_box(center: f64) -> impl Strategy<Value = BoundingBox3D> {
    (
        -center..center,
        -center..center,
        0.0..1.5f64,
        -PI..PI,
        1.0..6.0f64,
        0.8..3.0f64,
        0.8..3.0f64,
    )
        .prop_map(|(x, y, z, yaw, l, w, h)| BoundingBox3D::new(x, y, z, yaw, l, w, h, 1.0))
}

// ---------------------------------------------------------------- IoU

fn inside(b: &BoundingBox3D, px: f64, py: f64) -> bool {
    let (s, c) = b.yaw.sin_cos();
    let dx = px - b.x;
    let dy = py - b.y;
    let u = c * dx + s * dy;
    let v = -s * dx + c * dy;
    u.abs() <= b.l / 2.0 && v.abs() <= b.w / 2.0
}

fn raster_iou(a: &BoundingBox3D, b: &BoundingBox3D, cell: f64) -> f64 {
    let ra = a.l.hypot(a.w) / 2.0;
    let rb = b.l.hypot(b.w) / 2.0;
    let x0 = (a.x - ra).max(b.x - rb);
    let x1 = (a.x + ra).min(b.x + rb);
    let y0 = (a.y - ra).max(b.y - rb);
    let y1 = (a.y + ra).min(b.y + rb);
    let dz = (a.z + a.h / 2.0).min(b.z + b.h / 2.0) - (a.z - a.h / 2.0).max(b.z - b.h / 2.0);
    if x1 <= x0 || y1 <= y0 || dz <= 0.0 {
        return 0.0;
    }
    let nx = ((x1 - x0) / cell).ceil() as usize;
    let ny = ((y1 - y0) / cell).ceil() as usize;
    let mut hits = 0usize;
    for i in 0..nx {
        let px = x0 + (i as f64 + 0.5) * cell;
        for j in 0..ny {
            let py = y0 + (j as f64 + 0.5) * cell;
            if inside(a, px, py) && inside(b, px, py) {
                hits += 1;
            }
        }
    }
    let inter = hits as f64 * cell * cell * dz;
    inter / (a.l * a.w * a.h + b.l * b.w * b.h - inter)
}

/// Volumetric IoU against midpoint-rule rasterization of the footprints.
pub fn iou_vs_raster(cases: u32) -> Result<u32, String> {
    let r = runner(cases).run(&(arb_box(2.5), arb_box(2.5)), |(a, b)| {
        close(iou_3d(&a, &b), raster_iou(&a, &b, 0.01), 1e-2, "iou")?;
        close(iou_3d(&a, &b), iou_3d(&b, &a), 1e-12, "iou symmetry")?;
        close(iou_3d(&a, &a), 1.0, 1e-9, "self iou")
    });
    finish(r, cases)
}

// ---------------------------------------------------------------- Kalman

type Dense = Vec<Vec<f64>>;

fn zeros(r: usize, c: usize) -> Dense {
    vec![vec![0.0; c]; r]
}

fn eye(n: usize) -> Dense {
    let mut m = zeros(n, n);
    (0..n).for_each(|i| m[i][i] = 1.0);
    m
}

fn mul(a: &Dense, b: &Dense) -> Dense {
    let mut out = zeros(a.len(), b[0].len());
    for i in 0..a.len() {
        for j in 0..b[0].len() {
            out[i][j] = (0..b.len()).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    out
}

fn tr(a: &Dense) -> Dense {
    (0..a[0].len()).map(|j| (0..a.len()).map(|i| a[i][j]).collect()).collect()
}

fn add(a: &Dense, b: &Dense) -> Dense {
    a.iter().zip(b).map(|(r, s)| r.iter().zip(s).map(|(x, y)| x + y).collect()).collect()
}

fn sub(a: &Dense, b: &Dense) -> Dense {
    a.iter().zip(b).map(|(r, s)| r.iter().zip(s).map(|(x, y)| x - y).collect()).collect()
}

fn inverse(a: &Dense) -> Dense {
    let n = a.len();
    let mut m: Dense = a.iter().zip(eye(n)).map(|(r, e)| r.iter().copied().chain(e).collect()).collect();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| m[i][col].abs().total_cmp(&m[j][col].abs())).unwrap();
        m.swap(col, piv);
        let d = m[col][col];
        m[col].iter_mut().for_each(|v| *v /= d);
        for r in 0..n {
            if r != col {
                let f = m[r][col];
                let pivot_row = m[col].clone();
                m[r].iter_mut().zip(&pivot_row).for_each(|(v, p)| *v -= f * p);
            }
        }
    }
    m.into_iter().map(|r| r[n..].to_vec()).collect()
}

fn wrap(a: f64) -> f64 {
    let mut a = a % (2.0 * PI);
    if a > PI {
        a -= 2.0 * PI;
    }
    if a <= -PI {
        a += 2.0 * PI;
    }
    a
}

fn dense_of(s: &KalmanState) -> (Vec<f64>, Dense) {
    let x = (0..10).map(|i| s.mean[i]).collect();
    let p = (0..10).map(|i| (0..10).map(|j| s.covariance[(i, j)]).collect()).collect();
    (x, p)
}

fn oracle_predict(x: &[f64], p: &Dense, dt: f64, q: &[f64]) -> (Vec<f64>, Dense) {
    let mut f = eye(10);
    for i in 0..3 {
        f[i][i + 7] = dt;
    }
    let col: Dense = x.iter().map(|v| vec![*v]).collect();
    let mut xn: Vec<f64> = mul(&f, &col).into_iter().map(|r| r[0]).collect();
    xn[3] = wrap(xn[3]);
    let mut qm = zeros(10, 10);
    (0..10).for_each(|i| qm[i][i] = q[i]);
    (xn, add(&mul(&mul(&f, p), &tr(&f)), &qm))
}

fn oracle_update(x: &[f64], p: &Dense, z: &[f64; 7], r: &[f64]) -> (Vec<f64>, Dense) {
    let mut h = zeros(7, 10);
    (0..7).for_each(|i| h[i][i] = 1.0);
    let mut y: Vec<f64> = (0..7).map(|i| z[i] - x[i]).collect();
    let mut dyaw = wrap(y[3]);
    if dyaw.abs() > PI / 2.0 {
        dyaw = wrap(dyaw + PI);
    }
    y[3] = dyaw;
    let mut rm = zeros(7, 7);
    (0..7).for_each(|i| rm[i][i] = r[i]);
    let s = add(&mul(&mul(&h, p), &tr(&h)), &rm);
    let k = mul(&mul(p, &tr(&h)), &inverse(&s));
    let ycol: Dense = y.iter().map(|v| vec![*v]).collect();
    let dx = mul(&k, &ycol);
    let mut xn: Vec<f64> = x.iter().zip(&dx).map(|(a, d)| a + d[0]).collect();
    xn[3] = wrap(xn[3]);
    (xn, mul(&sub(&eye(10), &mul(&k, &h)), p))
}

fn compare_state(s: &KalmanState, x: &[f64], p: &Dense) -> Result<(), TestCaseError> {
    for i in 0..10 {
        let tol = 1e-9 * x[i].abs().max(1.0);
        if i == 3 {
            close(wrap(s.mean[3] - x[3]), 0.0, tol, "yaw")?;
        } else {
            close(s.mean[i], x[i], tol, "mean")?;
        }
        for j in 0..10 {
            close(s.covariance[(i, j)], p[i][j], 1e-9 * p[i][j].abs().max(1.0), "covariance")?;
        }
    }
    Ok(())
}

/// Kalman predict/update against textbook dense-matrix formulas.
pub fn kalman_vs_dense(cases: u32) -> Result<u32, String> {
    let cfg = TrackerConfig::default();
    let strat = (
        arb_box(20.0),
        prop::array::uniform3(-10.0..10.0f64),
        1..4usize,
        prop::collection::vec((arb_box(20.0), 0.05..0.3f64), 1..5),
    );
    let r = runner(cases).run(&strat, |(b0, v, _, seq)| {
        let mut s = KalmanState::from_box(&b0, &cfg);
        s.mean[7] = v[0];
        s.mean[8] = v[1];
        s.mean[9] = v[2] * 0.1;
        let (mut x, mut p) = dense_of(&s);
        for (z, dt) in seq {
            s = kalman::predict(&s, dt, &cfg);
            (x, p) = oracle_predict(&x, &p, dt, &cfg.q_diag);
            compare_state(&s, &x, &p)?;
            s = kalman::update(&s, &z, &cfg);
            let zv = [z.x, z.y, z.z, z.yaw, z.l, z.w, z.h];
            (x, p) = oracle_update(&x, &p, &zv, &cfg.r_diag);
            compare_state(&s, &x, &p)?;
            // Continue the chain from the library state so that rounding
            // differences cannot accumulate.
            (x, p) = dense_of(&s);
        }
        Ok(())
    });
    finish(r, cases)
}

// ---------------------------------------------------------------- association

fn best_total(iou: &[Vec<f64>], t: usize, used: &mut Vec<bool>, iou_min: f64) -> f64 {
    if t == iou.len() {
        return 0.0;
    }
    let mut best = best_total(iou, t + 1, used, iou_min);
    for d in 0..used.len() {
        if !used[d] && iou[t][d] >= iou_min {
            used[d] = true;
            best = best.max(iou[t][d] + best_total(iou, t + 1, used, iou_min));
            used[d] = false;
        }
    }
    best
}

/// Association against exhaustive enumeration of one-to-one assignments
/// (IoU stage) and a plain re-run of the distance stage.
pub fn associate_vs_exhaustive(cases: u32) -> Result<u32, String> {
    let cfg = TrackerConfig::default();
    let strat = (
        prop::collection::vec(arb_box(6.0), 0..=6),
        prop::collection::vec(arb_box(6.0), 0..=6),
    );
    let r = runner(cases).run(&strat, |(tracks, dets)| {
        let a = associate(&tracks, &dets, &cfg);
        let iou: Vec<Vec<f64>> = tracks.iter().map(|t| dets.iter().map(|d| iou_3d(t, d)).collect()).collect();
        let optimum = best_total(&iou, 0, &mut vec![false; dets.len()], cfg.iou_min);
        let stage1: Vec<(usize, usize)> = a
            .matches
            .iter()
            .copied()
            .filter(|&(t, d)| iou[t][d] >= cfg.iou_min)
            .collect();
        let got: f64 = stage1.iter().map(|&(t, d)| iou[t][d]).sum();
        close(got, optimum, 1e-9, "optimal IoU total")?;

        let mut t_used = vec![false; tracks.len()];
        let mut d_used = vec![false; dets.len()];
        for &(t, d) in &stage1 {
            prop_assert!(!t_used[t] && !d_used[d], "IoU stage is not one-to-one");
            t_used[t] = true;
            d_used[d] = true;
        }
        let mut expected = stage1.clone();
        loop {
            let mut best: Option<(f64, usize, usize)> = None;
            for t in (0..tracks.len()).filter(|&t| !t_used[t]) {
                for d in (0..dets.len()).filter(|&d| !d_used[d]) {
                    let dist = (tracks[t].x - dets[d].x).hypot(tracks[t].y - dets[d].y);
                    if dist <= cfg.dist_max && best.is_none_or(|b| (dist, t, d) < b) {
                        best = Some((dist, t, d));
                    }
                }
            }
            let Some((_, t, d)) = best else { break };
            t_used[t] = true;
            d_used[d] = true;
            expected.push((t, d));
        }
        expected.sort_unstable();
        prop_assert_eq!(&a.matches, &expected);
        let free_t: Vec<usize> = (0..tracks.len()).filter(|&t| !t_used[t]).collect();
        let free_d: Vec<usize> = (0..dets.len()).filter(|&d| !d_used[d]).collect();
        prop_assert_eq!(&a.unmatched_tracks, &free_t);
        prop_assert_eq!(&a.unmatched_detections, &free_d);
        Ok(())
    });
    finish(r, cases)
}

// ---------------------------------------------------------------- GMM

fn arb_component() -> impl Strategy<Value = (f64, f64, f64, f64, f64, f64)> {
    (0.05..1.0f64, -5.0..5.0f64, -5.0..5.0f64, 0.3..1.5f64, 0.3..1.5f64, -0.8..0.8f64)
}

fn step_of(raw: &[(f64, f64, f64, f64, f64, f64)]) -> GmmStep {
    let total: f64 = raw.iter().map(|c| c.0).sum();
    GmmStep {
        components: raw
            .iter()
            .map(|&(p, mu_x, mu_y, sigma_x, sigma_y, rho)| GmmComponent {
                p: p / total,
                mu_x,
                mu_y,
                sigma_x,
                sigma_y,
                rho,
            })
            .collect(),
    }
}

/// The mixture density integrates to one (midpoint rule on a fine grid).
pub fn gmm_normalization(cases: u32) -> Result<u32, String> {
    let strat = prop::collection::vec(arb_component(), 1..=4);
    let r = runner(cases).run(&strat, |raw| {
        let step = step_of(&raw);
        let x0 = step.components.iter().map(|c| c.mu_x - 9.0 * c.sigma_x).fold(f64::INFINITY, f64::min);
        let x1 = step.components.iter().map(|c| c.mu_x + 9.0 * c.sigma_x).fold(f64::NEG_INFINITY, f64::max);
        let y0 = step.components.iter().map(|c| c.mu_y - 9.0 * c.sigma_y).fold(f64::INFINITY, f64::min);
        let y1 = step.components.iter().map(|c| c.mu_y + 9.0 * c.sigma_y).fold(f64::NEG_INFINITY, f64::max);
        let h = 0.04;
        let nx = ((x1 - x0) / h).ceil() as usize;
        let ny = ((y1 - y0) / h).ceil() as usize;
        let mut total = 0.0;
        for i in 0..nx {
            let x = x0 + (i as f64 + 0.5) * h;
            for j in 0..ny {
                let y = y0 + (j as f64 + 0.5) * h;
                total += gmm_density((x, y), &step).map_err(|e| TestCaseError::fail(e.to_string()))?;
            }
        }
        close(total * h * h, 1.0, 1e-3, "integral")
    });
    finish(r, cases)
}

// ---------------------------------------------------------------- hull

fn in_closed_triangle(p: (f64, f64), a: (f64, f64), b: (f64, f64), c: (f64, f64)) -> bool {
    let cr = |o: (f64, f64), u: (f64, f64), v: (f64, f64)| (u.0 - o.0) * (v.1 - o.1) - (u.1 - o.1) * (v.0 - o.0);
    let d1 = cr(a, b, p);
    let d2 = cr(b, c, p);
    let d3 = cr(c, a, p);
    let neg = d1 < 0.0 || d2 < 0.0 || d3 < 0.0;
    let pos = d1 > 0.0 || d2 > 0.0 || d3 > 0.0;
    !(neg && pos)
}

/// Hull area by brute force: keep points that lie in no triangle of three
/// other points, order them by angle, fan-triangulate.
fn oracle_hull_area(points: &[(f64, f64)]) -> f64 {
    let mut pts = points.to_vec();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    pts.dedup();
    let n = pts.len();
    if n < 3 {
        return 0.0;
    }
    let mut extreme = Vec::new();
    'outer: for i in 0..n {
        for a in 0..n {
            for b in (a + 1)..n {
                for c in (b + 1)..n {
                    if [a, b, c].contains(&i) {
                        continue;
                    }
                    let area2 = ((pts[b].0 - pts[a].0) * (pts[c].1 - pts[a].1)
                        - (pts[b].1 - pts[a].1) * (pts[c].0 - pts[a].0))
                        .abs();
                    if area2 > 0.0 && in_closed_triangle(pts[i], pts[a], pts[b], pts[c]) {
                        continue 'outer;
                    }
                }
            }
        }
        extreme.push(pts[i]);
    }
    if extreme.len() < 3 {
        return 0.0;
    }
    let cx = extreme.iter().map(|p| p.0).sum::<f64>() / extreme.len() as f64;
    let cy = extreme.iter().map(|p| p.1).sum::<f64>() / extreme.len() as f64;
    extreme.sort_by(|a, b| (a.1 - cy).atan2(a.0 - cx).total_cmp(&(b.1 - cy).atan2(b.0 - cx)));
    let o = extreme[0];
    (1..extreme.len() - 1)
        .map(|i| {
            let (a, b) = (extreme[i], extreme[i + 1]);
            ((a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0)).abs() / 2.0
        })
        .sum()
}

/// Hull area against the brute-force triangulation oracle. Half the cases
/// use integer coordinates so that collinear and duplicate points occur.
pub fn hull_vs_triangulation(cases: u32) -> Result<u32, String> {
    let continuous = prop::collection::vec((-50.0..50.0f64, -50.0..50.0f64), 0..10);
    let lattice = prop::collection::vec((-3i32..=3, -3i32..=3), 0..10)
        .prop_map(|v| v.into_iter().map(|(x, y)| (x as f64 * 5.0, y as f64 * 5.0)).collect::<Vec<_>>());
    let strat = prop_oneof![continuous, lattice];
    let r = runner(cases).run(&strat, |pts| {
        let expected = oracle_hull_area(&pts);
        close(hull_area(&pts), expected, 1e-9 * expected.max(1.0), "hull area")
    });
    finish(r, cases)
}

// ---------------------------------------------------------------- minADE / minFDE

fn arb_forecast() -> impl Strategy<Value = (GmmTrajectory, Vec<(f64, f64)>)> {
    (1..=8usize, 50..=55usize).prop_flat_map(|(k, t)| {
        (
            prop::collection::vec(0.01..1.0f64, k),
            prop::collection::vec(prop::collection::vec((-30.0..30.0f64, -30.0..30.0f64), t), k),
            prop::collection::vec((-30.0..30.0f64, -30.0..30.0f64), t),
        )
            .prop_map(move |(w, means, gt)| {
                let total: f64 = w.iter().sum();
                let steps = (0..t)
                    .map(|s| GmmStep {
                        components: (0..k)
                            .map(|m| GmmComponent::isotropic(w[m] / total, means[m][s].0, means[m][s].1, 1.0))
                            .collect(),
                    })
                    .collect();
                (GmmTrajectory::new(0, 0, steps).unwrap(), gt)
            })
    })
}

/// minADE/minFDE against enumerating every mode among the heaviest six.
pub fn ade_fde_vs_enumeration(cases: u32) -> Result<u32, String> {
    let horizons = [10, 30, 50];
    let r = runner(cases).run(&arb_forecast(), |(g, gt)| {
        let got = prediction_ade_fde(&g, &gt, horizons, 6).map_err(|e| TestCaseError::fail(e.to_string()))?;
        let w = g.weights();
        let mut order: Vec<usize> = (0..g.k()).collect();
        // Heaviest first; equal weights keep the lower index.
        for i in 0..order.len() {
            for j in 0..order.len() - 1 - i {
                let (a, b) = (order[j], order[j + 1]);
                if w[b] > w[a] {
                    order.swap(j, j + 1);
                }
            }
        }
        order.truncate(6);
        for (hi, &h) in horizons.iter().enumerate() {
            let mut best_ade = f64::INFINITY;
            let mut best_fde = f64::INFINITY;
            for &m in &order {
                let mut sum = 0.0;
                for s in 0..h {
                    let c = &g.steps[s].components[m];
                    sum += ((c.mu_x - gt[s].0).powi(2) + (c.mu_y - gt[s].1).powi(2)).sqrt();
                }
                let c = &g.steps[h - 1].components[m];
                let fde = ((c.mu_x - gt[h - 1].0).powi(2) + (c.mu_y - gt[h - 1].1).powi(2)).sqrt();
                best_ade = best_ade.min(sum / h as f64);
                best_fde = best_fde.min(fde);
            }
            close(got.ade[hi], best_ade, 1e-9, "minADE")?;
            close(got.fde[hi], best_fde, 1e-9, "minFDE")?;
        }
        Ok(())
    });
    finish(r, cases)
}

// ---------------------------------------------------------------- NLL

/// With the ground truth on the selected component's means the per-step
/// NLL is `log(2 pi sigma_x sigma_y sqrt(1 - rho^2))`, i.e. `log(2 pi)`
/// for unit, uncorrelated components.
pub fn nll_at_mean(cases: u32) -> Result<u32, String> {
    let strat = (
        1..=5usize,
        1..=20usize,
        prop::bool::ANY,
        0.2..3.0f64,
        0.2..3.0f64,
        -0.9..0.9f64,
        -20.0..20.0f64,
    );
    let r = runner(cases).run(&strat, |(k, t, unit, sx, sy, rho, offset)| {
        let (sx, sy, rho) = if unit { (1.0, 1.0, 0.0) } else { (sx, sy, rho) };
        let steps = (0..t)
            .map(|s| GmmStep {
                components: (0..k)
                    .map(|m| GmmComponent {
                        p: 1.0 / k as f64,
                        mu_x: offset + s as f64 + 100.0 * m as f64,
                        mu_y: 3.0 * m as f64,
                        sigma_x: sx,
                        sigma_y: sy,
                        rho,
                    })
                    .collect(),
            })
            .collect();
        let g = GmmTrajectory::new(0, 0, steps).unwrap();
        let gt: Vec<(f64, f64)> = (0..t).map(|s| (offset + s as f64, 0.0)).collect();
        let score = prediction_score(&g, &gt, 1.0, 0.0).map_err(|e| TestCaseError::fail(e.to_string()))?;
        prop_assert_eq!(score.selected, 0);
        let expected = (2.0 * PI * sx * sy * (1.0 - rho * rho).sqrt()).ln();
        close(score.nll, expected, 1e-9, "nll")?;
        if unit {
            close(score.nll, (2.0 * PI).ln(), 1e-9, "log 2 pi")?;
        }
        Ok(())
    });
    finish(r, cases)
}

/// Every suite with its name, in a fixed order.
pub fn all_suites() -> Vec<(&'static str, fn(u32) -> Result<u32, String>)> {
    vec![
        ("iou_3d vs grid rasterization", iou_vs_raster),
        ("Kalman vs dense matrices", kalman_vs_dense),
        ("associate vs exhaustive assignment", associate_vs_exhaustive),
        ("gmm_density grid normalization", gmm_normalization),
        ("hull_area vs triangulation", hull_vs_triangulation),
        ("minADE/minFDE vs mode enumeration", ade_fde_vs_enumeration),
        ("NLL at component mean", nll_at_mean),
    ]
}
