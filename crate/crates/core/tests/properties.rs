use coopsim_core::geometry::{iou_3d, BoundingBox3D};
use coopsim_core::gmm::{GmmComponent, GmmStep, GmmTrajectory};
use coopsim_core::metrics::{detection_pr, hull_area, prediction_ade_fde, tracking_metrics, TrackFrame, TRACKING_IOU};
use proptest::prelude::*;

fn boxes() -> impl Strategy<Value = BoundingBox3D> {
    (-20.0f64..20.0, -20.0f64..20.0, -3.2f64..3.2, 1.0f64..6.0, 1.0f64..3.0).prop_map(|(x, y, yaw, l, w)| {
        BoundingBox3D::new(x, y, 0.8, yaw, l, w, 1.6, 1.0)
    })
}

fn trajectory(means: &[Vec<(f64, f64)>], weights: &[f64]) -> GmmTrajectory {
    let total: f64 = weights.iter().sum();
    let steps = (0..means[0].len())
        .map(|t| {
            GmmStep::new(
                means
                    .iter()
                    .zip(weights)
                    .map(|(m, w)| GmmComponent {
                        p: w / total,
                        mu_x: m[t].0,
                        mu_y: m[t].1,
                        sigma_x: 1.0,
                        sigma_y: 1.0,
                        rho: 0.0,
                    })
                    .collect(),
            )
            .unwrap()
        })
        .collect();
    GmmTrajectory::new(0, 0, steps).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 256, ..ProptestConfig::default() })]

    #[test]
    fn hull_area_invariant_under_rigid_motion(
        pts in prop::collection::vec((-50.0f64..50.0, -50.0f64..50.0), 1..12),
        angle in -3.2f64..3.2,
        tx in -100.0f64..100.0,
        ty in -100.0f64..100.0,
    ) {
        let (s, c) = angle.sin_cos();
        let moved: Vec<(f64, f64)> = pts.iter().map(|&(x, y)| (c * x - s * y + tx, s * x + c * y + ty)).collect();
        let (a, b) = (hull_area(&pts), hull_area(&moved));
        prop_assert!((a - b).abs() <= 1e-9 * a.max(1.0), "{} vs {}", a, b);
    }

    #[test]
    fn iou_symmetric_and_bounded(a in boxes(), b in boxes()) {
        let (ab, ba) = (iou_3d(&a, &b), iou_3d(&b, &a));
        prop_assert!((ab - ba).abs() < 1e-12);
        prop_assert!((0.0..=1.0 + 1e-12).contains(&ab));
        prop_assert!((iou_3d(&a, &a) - 1.0).abs() < 1e-9);
    }

    #[test]
    fn min_ade_non_increasing_in_k(
        offsets in prop::collection::vec((-5.0f64..5.0, -5.0f64..5.0), 6),
        weights in prop::collection::vec(0.05f64..1.0, 6),
    ) {
        let gt: Vec<(f64, f64)> = (1..=50).map(|t| (t as f64 * 0.8, 0.0)).collect();
        let means: Vec<Vec<(f64, f64)>> = offsets
            .iter()
            .map(|&(dx, dy)| gt.iter().enumerate().map(|(t, &(x, y))| (x + dx * t as f64 / 50.0, y + dy * t as f64 / 50.0)).collect())
            .collect();
        let g = trajectory(&means, &weights);
        let mut prev: Option<[f64; 3]> = None;
        for k in 1..=6 {
            let r = prediction_ade_fde(&g, &gt, [10, 30, 50], k).unwrap();
            if let Some(p) = prev {
                for h in 0..3 {
                    prop_assert!(r.ade[h] <= p[h] + 1e-12);
                }
            }
            prev = Some(r.ade);
        }
    }

    #[test]
    fn adding_a_true_positive_never_lowers_recall(
        gts in prop::collection::vec(boxes(), 1..6),
        dets in prop::collection::vec(boxes(), 0..6),
        pick in 0usize..6,
    ) {
        for t in [0.3, 0.5, 0.7] {
            let before = detection_pr(&dets, &gts, t);
            let mut more = dets.clone();
            more.push(gts[pick % gts.len()].with_score(0.9));
            let after = detection_pr(&more, &gts, t);
            prop_assert!(after.ar >= before.ar - 1e-12);
        }
    }

    #[test]
    fn deleting_track_outputs_never_raises_mota(
        n_frames in 3usize..12,
        drops in prop::collection::vec(any::<bool>(), 36),
    ) {
        // Three agents moving in parallel, tracked perfectly; then some
        // outputs are deleted (injected false negatives).
        let agent = |id: u64, f: usize| BoundingBox3D::new(f as f64, id as f64 * 5.0, 0.8, 0.0, 4.5, 2.0, 1.6, 1.0);
        let frames: Vec<TrackFrame> = (0..n_frames)
            .map(|f| {
                let gts: Vec<(u64, BoundingBox3D)> = (0..3).map(|id| (id, agent(id, f))).collect();
                TrackFrame { tracks: gts.iter().map(|(id, b)| (id + 100, b.with_score(0.9))).collect(), gts }
            })
            .collect();
        let full = tracking_metrics(std::slice::from_ref(&frames), TRACKING_IOU).unwrap();
        let mut thinned = frames.clone();
        for (f, frame) in thinned.iter_mut().enumerate() {
            let mut i = 0;
            frame.tracks.retain(|_| {
                i += 1;
                !drops[(f * 3 + i - 1) % drops.len()]
            });
        }
        let fewer = tracking_metrics(std::slice::from_ref(&thinned), TRACKING_IOU).unwrap();
        prop_assert!(fewer.mota <= full.mota + 1e-12);
        prop_assert!((full.mota - 1.0).abs() < 1e-12);
    }
}
