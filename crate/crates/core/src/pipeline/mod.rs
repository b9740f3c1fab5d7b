//! Frame-synchronous orchestration of sensing, sharing, fusion, tracking,
//! forecasting and forecast aggregation for every CAV at once.
//!
//! Every CAV acts as an ego. Within a frame the channel is resolved first,
//! then each CAV runs its own pipeline against that snapshot; CAVs are
//! processed in id order so the log layout is fixed.

mod audit;
mod eval;

pub use audit::{audit_causality, audit_feature_substitution, audit_prediction_timing, AuditReport};
pub use eval::{evaluate, hull_bin, EvalConfig, ForecastRecord, HullBin, MissRecord, RunMetrics, HULL_BINS};

use crate::aggregation::{
    aggregate, align_delayed, match_agents, AgentForecast, AggregationConfig, PredictionBundle, ReliabilityFeatures,
};
use crate::error::{Error, Result};
use crate::geometry::{transform_box, BoundingBox3D, Pose2D};
use crate::gmm::GmmTrajectory;
use crate::prediction::{fit_intentions, predict_agent, trajectory_endpoints, IntentionSet, PredictorConfig};
use crate::rng::{mix_seed, tag};
use crate::scenario::{generate_synthetic, GeneratorConfig, Scenario, FUTURE_FRAMES, HISTORY_FRAMES};
use crate::sensing::{fuse_detections, quantize_evidence, sense_local, SensorConfig};
use crate::tracking::{TrackOutput, Tracker, TrackerConfig};
use crate::v2x::{bandwidth_report, BandwidthReport, Channel, ChannelConfig, Message, MessageKind, Payload, SlotRecord};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::Path;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CooperationMode {
    NoCooperation,
    CooperativePerceptionOnly,
    CooperativePrediction,
}

impl CooperationMode {
    pub const ALL: [CooperationMode; 3] = [
        CooperationMode::NoCooperation,
        CooperationMode::CooperativePerceptionOnly,
        CooperationMode::CooperativePrediction,
    ];

    pub fn shares_features(self) -> bool {
        self != CooperationMode::NoCooperation
    }

    pub fn shares_predictions(self) -> bool {
        self == CooperationMode::CooperativePrediction
    }

    pub fn label(self) -> &'static str {
        match self {
            CooperationMode::NoCooperation => "no_cooperation",
            CooperationMode::CooperativePerceptionOnly => "cooperative_perception_only",
            CooperationMode::CooperativePrediction => "cooperative_prediction",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub mode: CooperationMode,
    pub delay_enabled: bool,
    pub compression: f64,
    pub channel: ChannelConfig,
    pub sensor: SensorConfig,
    pub tracker: TrackerConfig,
    pub predictor: PredictorConfig,
    pub aggregation: AggregationConfig,
    pub eval: EvalConfig,
    /// Salt for all sensing and quantization noise.
    pub noise_seed: u64,
    /// Keep every emitted forecast in the log (large).
    pub log_forecasts: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            mode: CooperationMode::CooperativePrediction,
            delay_enabled: false,
            compression: 1.0,
            channel: ChannelConfig::default(),
            sensor: SensorConfig::default(),
            tracker: TrackerConfig::default(),
            predictor: PredictorConfig::default(),
            aggregation: AggregationConfig::default(),
            eval: EvalConfig::default(),
            noise_seed: 0,
            log_forecasts: false,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.compression >= 1.0) || !self.compression.is_finite() {
            return Err(Error::invalid("run config", format!("compression {} must be >= 1", self.compression)));
        }
        self.channel.validate()?;
        self.sensor.validate()?;
        self.tracker.validate()?;
        self.predictor.validate()?;
        self.aggregation.validate()?;
        self.eval.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MessageRecord {
    pub sender: u64,
    pub receiver: u64,
    pub kind: MessageKind,
    pub frame_sent: usize,
    pub payload_bytes: f64,
    pub send_time: f64,
    pub arrival: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConsumedBundle {
    pub sender: u64,
    pub frame_generated: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EgoFrame {
    pub frame: usize,
    /// Fused detections, world frame.
    pub detections: Vec<BoundingBox3D>,
    pub tracks: Vec<TrackOutput>,
    pub consumed_bundles: Vec<ConsumedBundle>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EgoLog {
    pub cav: u64,
    pub frames: Vec<EgoFrame>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoggedForecast {
    pub ego: u64,
    pub frame: usize,
    pub trajectory: GmmTrajectory,
}

/// Everything a run produced; metrics are recomputed from this plus the
/// scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunLog {
    pub config: RunConfig,
    pub scenario_seed: u64,
    pub n_frames: usize,
    pub dt: f64,
    pub cav_ids: Vec<u64>,
    pub egos: Vec<EgoLog>,
    pub forecasts: Vec<ForecastRecord>,
    pub prediction_misses: Vec<MissRecord>,
    pub messages: Vec<MessageRecord>,
    pub slots: Vec<SlotRecord>,
    pub bandwidth: BandwidthReport,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub full_forecasts: Vec<LoggedForecast>,
}

impl RunLog {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<RunLog> {
        serde_json::from_str(text).map_err(|e| Error::Parse {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<RunLog> {
        RunLog::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn ego(&self, cav: u64) -> Option<&EgoLog> {
        self.egos.iter().find(|e| e.cav == cav)
    }
}

/// Learns intention points from the endpoints of ground-truth trajectories
/// in scenarios generated from `seeds`.
pub fn train_intentions(gen: &GeneratorConfig, seeds: &[u64], k: usize, seed: u64) -> Result<IntentionSet> {
    let mut endpoints = Vec::new();
    for &s in seeds {
        let scenario = generate_synthetic(gen, s)?;
        endpoints.extend(trajectory_endpoints(&scenario, FUTURE_FRAMES, 5));
    }
    fit_intentions(&endpoints, k, seed)
}

struct CavState {
    id: u64,
    tracker: Tracker,
}

fn eval_frame(frame: usize, n_frames: usize, stride: usize) -> bool {
    frame >= HISTORY_FRAMES && frame + FUTURE_FRAMES < n_frames && frame % stride == 0
}

fn forecast_tracks(
    cav: &CavState,
    frame: usize,
    scenario: &Scenario,
    intentions: &IntentionSet,
    cfg: &RunConfig,
) -> Result<Vec<(TrackOutput, AgentForecast)>> {
    let histories = cav.tracker.histories(HISTORY_FRAMES)?;
    let pose = scenario
        .agent(cav.id)
        .and_then(|a| a.pose_at(frame))
        .ok_or_else(|| Error::invalid("pipeline", format!("CAV {} has no pose at {frame}", cav.id)))?;
    let mut out = Vec::new();
    for t in cav.tracker.outputs() {
        let Some(h) = histories.get(&t.id) else {
            continue;
        };
        let samples: Vec<(usize, BoundingBox3D)> = h.iter().map(|e| (e.frame, e.bbox)).collect();
        let trajectory = predict_agent(t.id, frame, &samples, &scenario.map, intentions, &cfg.predictor)?;
        let track = cav.tracker.track(t.id).expect("output tracks exist");
        out.push((
            t,
            AgentForecast {
                trajectory,
                position: (t.bbox.x, t.bbox.y),
                reliability: ReliabilityFeatures {
                    cav_agent_distance: pose.distance_to(t.bbox.x, t.bbox.y),
                    score: track.mean_score().clamp(0.0, 1.0),
                    track_length: h.len(),
                },
            },
        ));
    }
    Ok(out)
}

/// Per-run state: the shared channel, every CAV's tracker and the log
/// being built. Advance with [`Pipeline::step`], then [`Pipeline::finish`].
pub struct Pipeline<'a> {
    scenario: &'a Scenario,
    cfg: &'a RunConfig,
    intentions: &'a IntentionSet,
    channel: Channel,
    cavs: Vec<CavState>,
    egos: Vec<EgoLog>,
    messages: Vec<MessageRecord>,
    slots: Vec<SlotRecord>,
    forecasts: Vec<ForecastRecord>,
    misses: Vec<MissRecord>,
    full_forecasts: Vec<LoggedForecast>,
    next_frame: usize,
}

impl<'a> Pipeline<'a> {
    pub fn new(scenario: &'a Scenario, cfg: &'a RunConfig, intentions: &'a IntentionSet) -> Result<Self> {
        cfg.validate()?;
        scenario.validate()?;
        let channel = Channel::new(cfg.channel.clone(), cfg.delay_enabled, scenario.dt)?;
        let mut ids = scenario.cav_ids.clone();
        ids.sort_unstable();
        let cavs: Vec<CavState> = ids
            .into_iter()
            .map(|id| CavState {
                id,
                tracker: Tracker::new(cfg.tracker.clone(), scenario.dt),
            })
            .collect();
        let egos = cavs
            .iter()
            .map(|c| EgoLog {
                cav: c.id,
                frames: Vec::with_capacity(scenario.n_frames),
            })
            .collect();
        Ok(Self {
            scenario,
            cfg,
            intentions,
            channel,
            cavs,
            egos,
            messages: Vec::new(),
            slots: Vec::new(),
            forecasts: Vec::new(),
            misses: Vec::new(),
            full_forecasts: Vec::new(),
            next_frame: 0,
        })
    }

    /// Next frame [`Pipeline::step`] will process.
    pub fn next_frame(&self) -> usize {
        self.next_frame
    }

    /// Processes one frame for every CAV: sense, share features, fuse,
    /// track, forecast, aggregate, share forecasts.
    pub fn step(&mut self) -> Result<()> {
        let (scenario, cfg) = (self.scenario, self.cfg);
        let frame = self.next_frame;
        let truth = scenario.truth_at(frame)?;
        let evidence: Vec<_> = self
            .cavs
            .iter()
            .map(|c| sense_local(c.id, &truth, &cfg.sensor, mix_seed(&[cfg.noise_seed, scenario.seed, c.id, frame as u64])))
            .collect::<Result<_>>()?;

        if cfg.mode.shares_features() {
            let send_time = frame as f64 * scenario.dt;
            for (c, e) in self.cavs.iter().zip(&evidence) {
                let q_seed = mix_seed(&[cfg.noise_seed, scenario.seed, c.id, frame as u64, tag::QUANTIZE]);
                let q = quantize_evidence(e, cfg.compression, &cfg.sensor, q_seed)?;
                for r in self.cavs.iter().filter(|r| r.id != c.id) {
                    let m = Message::new(c.id, r.id, frame, q.nominal_feature_bytes, Payload::Feature(q.clone()))?;
                    self.messages.push(record_of(self.channel.send(m, send_time)));
                }
            }
        }

        let eval_now = eval_frame(frame, scenario.n_frames, cfg.eval.stride);
        // Outside cooperative prediction a forecast is only observable when
        // it is scored, so the others are skipped.
        let predict_now = eval_now || cfg.mode.shares_predictions();
        let world = Pose2D::origin();
        let mut outgoing: Vec<PredictionBundle> = Vec::new();
        for (ci, cav) in self.cavs.iter_mut().enumerate() {
            let pose = truth.cav_poses[&cav.id];
            let received: Vec<_> = if cfg.mode.shares_features() {
                let (polled, records) = self.channel.poll(cav.id, frame);
                let r = polled
                    .values()
                    .filter_map(|p| match &p.message.payload {
                        Payload::Feature(e) => Some(e.aligned_to(&pose).cropped_to_grid(&cfg.sensor)),
                        Payload::Prediction(_) => None,
                    })
                    .collect();
                self.slots.extend(records);
                r
            } else {
                Vec::new()
            };
            let fused = fuse_detections(&evidence[ci], &received);
            let world_boxes: Vec<BoundingBox3D> = fused.boxes.iter().map(|b| transform_box(b, &pose, &world)).collect();
            let tracks = cav.tracker.step(frame, &world_boxes);

            let mut consumed = Vec::new();
            if predict_now {
                let own = forecast_tracks(cav, frame, scenario, self.intentions, cfg)?;
                let final_forecasts = if cfg.mode.shares_predictions() {
                    let bundles: Vec<PredictionBundle> = self
                        .channel
                        .poll_predictions(cav.id, frame)
                        .into_iter()
                        .filter_map(|f| match &f.message.payload {
                            Payload::Prediction(b) => Some(b.clone()),
                            Payload::Feature(_) => None,
                        })
                        .collect();
                    let aggregated = aggregate_with(&own, &bundles, frame, &cfg.aggregation)?;
                    consumed = bundles
                        .iter()
                        .map(|b| ConsumedBundle {
                            sender: b.sender,
                            frame_generated: b.frame_generated,
                        })
                        .collect();
                    outgoing.push(PredictionBundle {
                        sender: cav.id,
                        frame_generated: frame,
                        sender_pose: pose,
                        forecasts: own.into_iter().map(|(_, f)| f).collect(),
                    });
                    aggregated
                } else {
                    own.into_iter().map(|(_, f)| f.trajectory).collect()
                };
                if eval_now {
                    let (recs, miss) =
                        eval::score_forecasts(cav.id, frame, &tracks, &final_forecasts, &truth, scenario, &cfg.eval)?;
                    self.forecasts.extend(recs);
                    self.misses.extend(miss);
                    if cfg.log_forecasts {
                        self.full_forecasts
                            .extend(final_forecasts.into_iter().map(|trajectory| LoggedForecast {
                                ego: cav.id,
                                frame,
                                trajectory,
                            }));
                    }
                }
            }
            self.egos[ci].frames.push(EgoFrame {
                frame,
                detections: world_boxes,
                tracks,
                consumed_bundles: consumed,
            });
        }

        let send_time = self.channel.processing_time(frame);
        for b in outgoing {
            for r in self.cavs.iter().filter(|r| r.id != b.sender) {
                let m = Message::new(b.sender, r.id, frame, b.payload_bytes(), Payload::Prediction(b.clone()))?;
                self.messages.push(record_of(self.channel.send(m, send_time)));
            }
        }
        self.channel.prune(frame, 4);
        self.next_frame += 1;
        Ok(())
    }

    pub fn finish(self) -> Result<RunLog> {
        let duration = self.next_frame as f64 * self.scenario.dt;
        Ok(RunLog {
            config: self.cfg.clone(),
            scenario_seed: self.scenario.seed,
            n_frames: self.scenario.n_frames,
            dt: self.scenario.dt,
            cav_ids: self.cavs.iter().map(|c| c.id).collect(),
            egos: self.egos,
            forecasts: self.forecasts,
            prediction_misses: self.misses,
            messages: self.messages,
            slots: self.slots,
            bandwidth: bandwidth_report(&self.channel.log, duration)?,
            full_forecasts: self.full_forecasts,
        })
    }
}

/// Runs one scenario under one configuration.
pub fn run(scenario: &Scenario, cfg: &RunConfig, intentions: &IntentionSet) -> Result<RunLog> {
    let mut p = Pipeline::new(scenario, cfg, intentions)?;
    for _ in 0..scenario.n_frames {
        p.step()?;
    }
    p.finish()
}

fn record_of(f: &crate::v2x::InFlight) -> MessageRecord {
    MessageRecord {
        sender: f.message.sender,
        receiver: f.message.receiver,
        kind: f.message.kind,
        frame_sent: f.message.frame_sent,
        payload_bytes: f.message.payload_bytes,
        send_time: f.send_time,
        arrival: f.arrival,
    }
}

/// Aggregates each own forecast with the matching forecasts of the remote
/// bundles (generated one frame earlier).
fn aggregate_with(
    own: &[(TrackOutput, AgentForecast)],
    bundles: &[PredictionBundle],
    frame: usize,
    cfg: &AggregationConfig,
) -> Result<Vec<GmmTrajectory>> {
    let ego_positions: Vec<(u64, (f64, f64))> = own.iter().map(|(t, _)| (t.id, (t.bbox.x, t.bbox.y))).collect();
    // Per ego track: the aligned remote forecasts and their reliabilities.
    let mut extra: BTreeMap<u64, Vec<(GmmTrajectory, ReliabilityFeatures)>> = BTreeMap::new();
    for b in bundles {
        if b.frame_generated + 1 != frame {
            return Err(Error::invalid("pipeline", "bundle is not exactly one frame old"));
        }
        let remote_positions: Vec<(u64, (f64, f64))> = b
            .forecasts
            .iter()
            .map(|f| (f.trajectory.agent_id, f.trajectory.steps[0].mean()))
            .collect();
        let matched = match_agents(&ego_positions, &remote_positions, cfg.match_gate);
        for (ego_id, remote_id) in matched {
            let f = b
                .forecasts
                .iter()
                .find(|f| f.trajectory.agent_id == remote_id)
                .expect("matched id comes from this bundle");
            let aligned = align_delayed(&f.trajectory, frame)?;
            extra.entry(ego_id).or_default().push((aligned, f.reliability));
        }
    }
    own.iter()
        .map(|(t, f)| match extra.get(&t.id) {
            None => Ok(f.trajectory.clone()),
            Some(remotes) => {
                let trajs: Vec<GmmTrajectory> = remotes.iter().map(|(g, _)| g.clone()).collect();
                let mut rel = vec![f.reliability];
                rel.extend(remotes.iter().map(|(_, r)| *r));
                aggregate(&f.trajectory, &trajs, &rel, cfg)
            }
        })
        .collect()
}
