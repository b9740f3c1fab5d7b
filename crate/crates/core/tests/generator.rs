use coopsim_core::geometry::BoundingBox3D;
use coopsim_core::scenario::{generate_synthetic, GeneratorConfig, MapKind, Scenario};
use coopsim_core::sensing::visible;

fn straight(speed: f64) -> GeneratorConfig {
    GeneratorConfig {
        map: MapKind::Straight { lanes: 1 },
        n_agents: 3,
        n_cavs: 2,
        speed_range: [speed, speed],
        cav_speed_range: [speed, speed],
        occlusion_density: 0.0,
        ..Default::default()
    }
}

#[test]
fn constant_velocity_on_a_straight_lane() {
    let s = generate_synthetic(&straight(10.0), 3).unwrap();
    let mut checked = 0;
    for a in &s.agents {
        let first = a.frames[0];
        // CAVs halt at the end of their route instead of leaving the map.
        for st in a.frames.iter().take_while(|st| st.vx != 0.0) {
            let k = (st.frame - first.frame) as f64;
            let dir = first.vx.signum();
            assert!((st.x - (first.x + dir * k * s.dt * 10.0)).abs() < 1e-9, "agent {} frame {}", a.id, st.frame);
            assert!((st.y - first.y).abs() < 1e-9);
            assert!((st.vx.abs() - 10.0).abs() < 1e-9 && st.vy.abs() < 1e-9);
            checked += 1;
        }
    }
    assert!(checked > 100);
}

#[test]
fn intersection_agents_stay_inside_the_map() {
    let cfg = GeneratorConfig::default();
    let half = cfg.extent / 2.0;
    for seed in 0..10 {
        let s = generate_synthetic(&cfg, seed).unwrap();
        assert_eq!(s.cav_ids.len(), 3);
        for a in &s.agents {
            for st in &a.frames {
                assert!(
                    st.x.abs() <= half + 1e-9 && st.y.abs() <= half + 1e-9,
                    "seed {seed}, agent {} at ({}, {}) frame {}",
                    a.id,
                    st.x,
                    st.y,
                    st.frame
                );
            }
        }
    }
}

#[test]
fn displacement_per_frame_bounded_by_top_speed() {
    let cfg = GeneratorConfig::default();
    let v_max = cfg.speed_range[1].max(cfg.cav_speed_range[1]).max(cfg.turn_speed);
    for seed in 0..10 {
        let s = generate_synthetic(&cfg, seed).unwrap();
        for a in &s.agents {
            for w in a.frames.windows(2) {
                let d = (w[1].x - w[0].x).hypot(w[1].y - w[0].y);
                assert!(d <= v_max * s.dt + 1e-9, "seed {seed}, agent {}: {d}", a.id);
                let v = w[0].vx.hypot(w[0].vy).max(w[1].vx.hypot(w[1].vy));
                assert!(d <= v * s.dt + 1e-9);
            }
        }
    }
}

/// Rolls an agent forward from its first state with the logged velocities
/// and compares with the stored pose on straight maps, where the motion
/// model is exactly linear.
#[test]
fn truth_matches_independent_rollout() {
    let cfg = GeneratorConfig {
        map: MapKind::Straight { lanes: 3 },
        n_agents: 10,
        ..Default::default()
    };
    let s = generate_synthetic(&cfg, 11).unwrap();
    let mid = s.n_frames / 2;
    let truth = s.truth_at(mid).unwrap();
    let mut compared = 0;
    for (id, b) in &truth.boxes {
        let a = s.agent(*id).unwrap();
        if a.state_at(mid).unwrap().vx == 0.0 {
            continue;
        }
        let first = a.frames[0];
        let k = (mid - first.frame) as f64;
        let (x, y) = (first.x + first.vx * k * s.dt, first.y + first.vy * k * s.dt);
        assert!((b.x - x).abs() < 1e-9 && (b.y - y).abs() < 1e-9, "agent {id}");
        assert_eq!((b.l, b.w, b.h, b.score), (a.l, a.w, a.h, 1.0));
        compared += 1;
    }
    assert!(compared >= 2);
    assert!(s.truth_at(s.n_frames).is_err());
}

fn occluded_pair_exists(s: &Scenario, frame: usize, max_range: f64) -> bool {
    let truth = s.truth_at(frame).unwrap();
    truth.cav_poses.iter().any(|(cav, pose)| {
        truth.boxes.iter().any(|(id, target)| {
            if id == cav || pose.distance_to(target.x, target.y) > max_range {
                return false;
            }
            let others: Vec<BoundingBox3D> = truth
                .boxes
                .iter()
                .filter(|(o, _)| o != id && o != cav)
                .map(|(_, b)| *b)
                .collect();
            !visible(pose, target, &others, max_range)
        })
    })
}

#[test]
fn occlusion_knob_produces_occluded_frames() {
    let cfg = GeneratorConfig::default();
    assert!(cfg.occlusion_density > 0.0);
    let mut frames = 0;
    let mut occluded = 0;
    for seed in 0..5 {
        let s = generate_synthetic(&cfg, seed).unwrap();
        for f in 0..s.n_frames {
            frames += 1;
            occluded += occluded_pair_exists(&s, f, 50.0) as usize;
        }
    }
    let fraction = occluded as f64 / frames as f64;
    assert!(fraction >= 0.5, "occluded fraction {fraction}");
}

#[test]
fn save_load_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let s = generate_synthetic(&GeneratorConfig::default(), 5).unwrap();
    let path = dir.path().join("s.json");
    s.save(&path).unwrap();
    assert_eq!(coopsim_core::scenario::load_scenario(&path).unwrap(), s);
}
