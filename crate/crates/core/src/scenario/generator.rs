//! Synthetic scenario generation on straight-road and four-way-intersection
//! maps. Agents follow lane routes at a constant speed per route segment;
//! turns are circular arcs.

use super::route::{Route, Segment};
use super::{AgentRecord, AgentState, MapPolyline, PolylineKind, Scenario, FUTURE_FRAMES, HISTORY_FRAMES};
use crate::error::{Error, Result};
use crate::rng::{stream, tag};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::{FRAC_PI_2, PI};

pub const LANE_WIDTH: f64 = 3.5;
/// Half-size of the square junction box.
const JUNCTION_HALF: f64 = 7.0;
const MIN_SPAWN_GAP: f64 = 8.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MapKind {
    /// Parallel lanes along x; even lanes drive towards +x, odd towards -x.
    Straight { lanes: usize },
    Intersection,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CavPlacement {
    /// Anywhere on the map.
    Spread,
    /// Start within `radius` metres of the map centre.
    Clustered { radius: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorConfig {
    pub map: MapKind,
    /// Side of the square window, metres.
    pub extent: f64,
    pub n_frames: usize,
    pub dt: f64,
    /// Moving non-CAV vehicles.
    pub n_agents: usize,
    pub n_cavs: usize,
    pub speed_range: [f64; 2],
    pub turn_speed: f64,
    pub cav_speed_range: [f64; 2],
    pub cav_placement: CavPlacement,
    /// Fraction of moving agents present at frame 0; the rest enter later.
    pub initial_fraction: f64,
    /// 0 disables parked trucks; 1 fills every shoulder slot near the junction.
    pub occlusion_density: f64,
    pub vehicle_extent: [f64; 3],
    pub truck_extent: [f64; 3],
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            map: MapKind::Intersection,
            extent: 100.0,
            n_frames: 200,
            dt: super::DEFAULT_DT,
            n_agents: 20,
            n_cavs: 3,
            speed_range: [5.0, 9.0],
            turn_speed: 5.0,
            cav_speed_range: [3.0, 7.0],
            cav_placement: CavPlacement::Spread,
            initial_fraction: 0.6,
            occlusion_density: 0.5,
            vehicle_extent: [4.5, 2.0, 1.6],
            truck_extent: [10.0, 2.6, 3.5],
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(2..=7).contains(&self.n_cavs) {
            return Err(Error::invalid(
                "generator config",
                format!("CAV count {} outside [2, 7]", self.n_cavs),
            ));
        }
        if self.n_frames < HISTORY_FRAMES + FUTURE_FRAMES {
            return Err(Error::invalid(
                "generator config",
                format!(
                    "duration {} frames shorter than history + horizon ({})",
                    self.n_frames,
                    HISTORY_FRAMES + FUTURE_FRAMES
                ),
            ));
        }
        if !(self.extent > 2.0 * JUNCTION_HALF + 10.0 && self.extent <= 100.0) {
            return Err(Error::invalid("generator config", "extent must lie in (24, 100] m"));
        }
        if !(self.dt > 0.0) {
            return Err(Error::invalid("generator config", "dt must be positive"));
        }
        if self.speed_range[0] > self.speed_range[1] || self.speed_range[0] < 0.0 {
            return Err(Error::invalid("generator config", "bad speed_range"));
        }
        if self.cav_speed_range[0] > self.cav_speed_range[1] || self.cav_speed_range[0] < 0.0 {
            return Err(Error::invalid("generator config", "bad cav_speed_range"));
        }
        if let MapKind::Straight { lanes } = self.map {
            if lanes == 0 {
                return Err(Error::invalid("generator config", "straight map needs a lane"));
            }
        }
        if !(0.0..=1.0).contains(&self.occlusion_density) {
            return Err(Error::invalid("generator config", "occlusion_density outside [0, 1]"));
        }
        Ok(())
    }
}

struct Layout {
    routes: Vec<Route>,
    map: Vec<MapPolyline>,
    /// Shoulder parking slots `(x, y, yaw)` for occluding trucks.
    slots: Vec<(f64, f64, f64)>,
}

fn straight_layout(cfg: &GeneratorConfig, lanes: usize) -> Layout {
    let half = cfg.extent / 2.0;
    let mut routes = Vec::new();
    let mut map = Vec::new();
    for i in 0..lanes {
        let y = (i as f64 - (lanes as f64 - 1.0) / 2.0) * LANE_WIDTH;
        let (start, heading) = if i % 2 == 0 {
            ((-half, y), 0.0)
        } else {
            ((half, y), PI)
        };
        let seg = Segment::Line {
            start,
            heading,
            length: cfg.extent,
        };
        map.push(MapPolyline {
            kind: PolylineKind::LaneCenter,
            points: seg.sample(cfg.extent),
        });
        routes.push(Route {
            segments: vec![seg],
            speeds: vec![0.0],
        });
    }
    let edge = lanes as f64 * LANE_WIDTH / 2.0;
    for y in [-edge, edge] {
        map.push(MapPolyline {
            kind: PolylineKind::RoadEdge,
            points: vec![[-half, y], [half, y]],
        });
    }
    let park = edge + 1.8;
    let slots = [-30.0, -15.0, 0.0, 15.0, 30.0]
        .iter()
        .flat_map(|&x| [(x, -park, 0.0), (x, park, PI)])
        .collect();
    Layout { routes, map, slots }
}

fn intersection_layout(cfg: &GeneratorConfig) -> Layout {
    let half = cfg.extent / 2.0;
    let lane = LANE_WIDTH / 2.0;
    let j = JUNCTION_HALF;
    let arm = half - j;
    // Routes entering from the west, driving on the right.
    let approach = Segment::Line {
        start: (-half, -lane),
        heading: 0.0,
        length: arm,
    };
    let through = Segment::Line {
        start: (-j, -lane),
        heading: 0.0,
        length: 2.0 * j,
    };
    let right = Segment::Arc {
        start: (-j, -lane),
        heading: 0.0,
        radius: j - lane,
        sweep: -FRAC_PI_2,
    };
    let left = Segment::Arc {
        start: (-j, -lane),
        heading: 0.0,
        radius: j + lane,
        sweep: FRAC_PI_2,
    };
    let exit_from = |seg: &Segment| {
        let (x, y, h) = seg.end_pose();
        Segment::Line {
            start: (x, y),
            heading: h,
            length: arm,
        }
    };
    let mut routes = Vec::new();
    let mut map = Vec::new();
    for r in 0..4 {
        let angle = r as f64 * FRAC_PI_2;
        let app = approach.rotated(angle);
        map.push(MapPolyline {
            kind: PolylineKind::LaneCenter,
            points: app.sample(arm),
        });
        // Outbound lane of this arm: the exit of the straight route from the
        // opposite approach, rotated into place.
        let outbound = exit_from(&through).rotated(angle + PI);
        map.push(MapPolyline {
            kind: PolylineKind::LaneCenter,
            points: outbound.sample(arm),
        });
        for (maneuver, is_turn) in [(through, false), (right, true), (left, true)] {
            let m = maneuver.rotated(angle);
            map.push(MapPolyline {
                kind: PolylineKind::LaneCenter,
                points: m.sample(1.0),
            });
            let exit = exit_from(&maneuver).rotated(angle);
            routes.push((vec![app, m, exit], is_turn));
        }
        for side in [-1.0, 1.0] {
            let edge = Segment::Line {
                start: (-half, side * LANE_WIDTH),
                heading: 0.0,
                length: arm,
            }
            .rotated(angle);
            map.push(MapPolyline {
                kind: PolylineKind::RoadEdge,
                points: edge.sample(arm),
            });
        }
    }
    let routes = routes
        .into_iter()
        .map(|(segments, is_turn)| Route {
            speeds: vec![0.0; segments.len()],
            segments,
        }
        .with_turn_flag(is_turn))
        .collect();
    let park = LANE_WIDTH + 1.8;
    let mut slots = Vec::new();
    for r in 0..4 {
        let angle = r as f64 * FRAC_PI_2;
        let (s, c) = angle.sin_cos();
        for d in [j + 7.0, j + 19.0] {
            for side in [-1.0, 1.0] {
                let (x, y) = (-d, side * park);
                slots.push((c * x - s * y, s * x + c * y, angle));
            }
        }
    }
    Layout { routes, map, slots }
}

trait TurnFlag {
    fn with_turn_flag(self, is_turn: bool) -> Route;
}

impl TurnFlag for Route {
    // Marks the middle segment of a turning route with a negative speed
    // placeholder; real speeds are assigned per agent.
    fn with_turn_flag(mut self, is_turn: bool) -> Route {
        if is_turn && self.speeds.len() == 3 {
            self.speeds[1] = -1.0;
        }
        self
    }
}

fn assign_speeds(template: &Route, cruise: f64, turn_speed: f64) -> Route {
    let speeds = template
        .speeds
        .iter()
        .map(|&flag| if flag < 0.0 { cruise.min(turn_speed) } else { cruise })
        .collect();
    Route {
        segments: template.segments.clone(),
        speeds,
    }
}

struct Plan {
    route: Route,
    spawn: usize,
    s0: f64,
    persistent: bool,
}

fn rollout(plan: &Plan, n_frames: usize, dt: f64, z: f64) -> Vec<AgentState> {
    let mut out = Vec::new();
    let total = plan.route.length();
    for frame in plan.spawn..n_frames {
        let t = (frame - plan.spawn) as f64 * dt;
        let (s, v) = match plan.route.advance(plan.s0, t) {
            Some(sv) => sv,
            None if plan.persistent => (total, 0.0),
            None => break,
        };
        let (x, y, yaw) = plan.route.pose_at(s);
        out.push(AgentState {
            frame,
            x,
            y,
            z,
            yaw,
            vx: v * yaw.cos(),
            vy: v * yaw.sin(),
        });
    }
    out
}

fn position_at(states: &[AgentState], frame: usize) -> Option<(f64, f64)> {
    let first = states.first()?.frame;
    frame
        .checked_sub(first)
        .and_then(|i| states.get(i))
        .map(|s| (s.x, s.y))
}

fn clear_of(existing: &[Vec<AgentState>], frame: usize, p: (f64, f64), gap: f64) -> bool {
    existing
        .iter()
        .filter_map(|s| position_at(s, frame))
        .all(|q| (q.0 - p.0).hypot(q.1 - p.1) >= gap)
}

/// Builds a scenario; a pure function of `(cfg, seed)`.
pub fn generate_synthetic(cfg: &GeneratorConfig, seed: u64) -> Result<Scenario> {
    cfg.validate()?;
    let mut rng = stream(&[seed, tag::GENERATE]);
    let layout = match cfg.map {
        MapKind::Straight { lanes } => straight_layout(cfg, lanes),
        MapKind::Intersection => intersection_layout(cfg),
    };
    let mut agents: Vec<AgentRecord> = Vec::new();
    let mut occupied: Vec<Vec<AgentState>> = Vec::new();
    let mut next_id = 0u64;

    let uniform = |rng: &mut rand_chacha::ChaCha8Rng, r: [f64; 2]| {
        if r[1] > r[0] {
            rng.random_range(r[0]..r[1])
        } else {
            r[0]
        }
    };

    // Parked trucks first so moving traffic spawns clear of them.
    let n_parked = (cfg.occlusion_density * layout.slots.len() as f64 / 2.0).round() as usize;
    let mut slots = layout.slots.clone();
    slots.shuffle(&mut rng);
    let [tl, tw, th] = cfg.truck_extent;
    for &(x, y, yaw) in slots.iter().take(n_parked) {
        let frames: Vec<AgentState> = (0..cfg.n_frames)
            .map(|frame| AgentState {
                frame,
                x,
                y,
                z: th / 2.0,
                yaw,
                vx: 0.0,
                vy: 0.0,
            })
            .collect();
        occupied.push(frames.clone());
        agents.push(AgentRecord {
            id: 0,
            l: tl,
            w: tw,
            h: th,
            frames,
        });
    }

    let [vl, vw, vh] = cfg.vehicle_extent;
    let mut cav_ids = Vec::new();
    for _ in 0..cfg.n_cavs {
        let mut best: Option<Vec<AgentState>> = None;
        for attempt in 0..200 {
            let template = &layout.routes[rng.random_range(0..layout.routes.len())];
            let cruise = uniform(&mut rng, cfg.cav_speed_range);
            let route = assign_speeds(template, cruise, cfg.turn_speed);
            let s0 = rng.random_range(0.0..route.length() * 0.9);
            let (x, y, _) = route.pose_at(s0);
            let in_region = match cfg.cav_placement {
                CavPlacement::Spread => true,
                CavPlacement::Clustered { radius } => x.hypot(y) <= radius,
            };
            let clear = clear_of(&occupied, 0, (x, y), MIN_SPAWN_GAP);
            if (in_region && clear) || attempt == 199 {
                let plan = Plan {
                    route,
                    spawn: 0,
                    s0,
                    persistent: true,
                };
                best = Some(rollout(&plan, cfg.n_frames, cfg.dt, vh / 2.0));
                break;
            }
        }
        let frames = best.expect("loop always yields on the last attempt");
        occupied.push(frames.clone());
        cav_ids.push(agents.len());
        agents.push(AgentRecord {
            id: 0,
            l: vl,
            w: vw,
            h: vh,
            frames,
        });
    }

    let truck_share = cfg.occlusion_density * 0.2;
    for _ in 0..cfg.n_agents {
        let is_truck = rng.random::<f64>() < truck_share;
        let (l, w, h) = if is_truck { (tl, tw, th) } else { (vl, vw, vh) };
        let mut chosen: Option<Vec<AgentState>> = None;
        for attempt in 0..50 {
            let template = &layout.routes[rng.random_range(0..layout.routes.len())];
            let cruise = uniform(&mut rng, cfg.speed_range);
            let route = assign_speeds(template, cruise, cfg.turn_speed);
            let (spawn, s0) = if rng.random::<f64>() < cfg.initial_fraction {
                (0, rng.random_range(0.0..route.length() * 0.8))
            } else {
                (rng.random_range(1..cfg.n_frames - HISTORY_FRAMES), 0.0)
            };
            let (x, y, _) = route.pose_at(s0);
            if clear_of(&occupied, spawn, (x, y), MIN_SPAWN_GAP) || attempt == 49 {
                let plan = Plan {
                    route,
                    spawn,
                    s0,
                    persistent: false,
                };
                let frames = rollout(&plan, cfg.n_frames, cfg.dt, h / 2.0);
                if !frames.is_empty() {
                    chosen = Some(frames);
                }
                break;
            }
        }
        if let Some(frames) = chosen {
            occupied.push(frames.clone());
            agents.push(AgentRecord { id: 0, l, w, h, frames });
        }
    }

    // CAVs take the lowest ids, then moving traffic, then parked trucks.
    let mut order: Vec<usize> = cav_ids.clone();
    order.extend((n_parked..agents.len()).filter(|i| !cav_ids.contains(i)));
    order.extend(0..n_parked);
    let mut ordered = Vec::with_capacity(agents.len());
    for idx in order {
        let mut a = agents[idx].clone();
        a.id = next_id;
        next_id += 1;
        ordered.push(a);
    }
    let scenario = Scenario {
        dt: cfg.dt,
        n_frames: cfg.n_frames,
        seed,
        agents: ordered,
        cav_ids: (0..cfg.n_cavs as u64).collect(),
        map: layout.map,
    };
    scenario.validate()?;
    Ok(scenario)
}
