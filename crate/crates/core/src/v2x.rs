//! V2X channel model: payload sizes, bandwidth-induced latency, the
//! deadline drop-and-substitute rule, and per-link byte accounting.
//!
//! Timing: data for frame `F` is captured at `F * dt` and sent immediately.
//! A receiver processes frame `F` at `F * dt + deadline`. A message whose
//! transit exceeds the deadline is dropped from its slot and the freshest
//! older message from the same sender that has arrived by then is used
//! instead.

use crate::aggregation::PredictionBundle;
use crate::error::{Error, Result};
use crate::sensing::DetectionEvidence;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// Slack for floating-point comparisons of arrival times.
const TIME_EPS: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ChannelConfig {
    /// Bytes per second per link.
    pub bandwidth: f64,
    pub base_latency: f64,
    pub deadline: f64,
}

impl Default for ChannelConfig {
    fn default() -> Self {
        Self {
            bandwidth: 2.5e8,
            base_latency: 0.005,
            deadline: 0.100,
        }
    }
}

impl ChannelConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.bandwidth > 0.0) {
            return Err(Error::invalid("channel config", "bandwidth must be positive"));
        }
        if !(self.deadline > 0.0) {
            return Err(Error::invalid("channel config", "deadline must be positive"));
        }
        if !(self.base_latency >= 0.0) || !self.base_latency.is_finite() {
            return Err(Error::invalid("channel config", "base_latency must be finite and >= 0"));
        }
        Ok(())
    }

    pub fn transit(&self, payload_bytes: f64) -> f64 {
        self.base_latency + payload_bytes / self.bandwidth
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MessageKind {
    FeatureEvidence,
    Prediction,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Payload {
    Feature(DetectionEvidence),
    Prediction(PredictionBundle),
}

impl Payload {
    pub fn kind(&self) -> MessageKind {
        match self {
            Payload::Feature(_) => MessageKind::FeatureEvidence,
            Payload::Prediction(_) => MessageKind::Prediction,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Message {
    pub sender: u64,
    pub receiver: u64,
    pub frame_sent: usize,
    pub kind: MessageKind,
    pub payload_bytes: f64,
    pub payload: Payload,
}

impl Message {
    pub fn new(sender: u64, receiver: u64, frame_sent: usize, payload_bytes: f64, payload: Payload) -> Result<Self> {
        if !(payload_bytes > 0.0) || !payload_bytes.is_finite() {
            return Err(Error::invalid("message", format!("payload_bytes {payload_bytes} must be > 0")));
        }
        Ok(Self {
            sender,
            receiver,
            frame_sent,
            kind: payload.kind(),
            payload_bytes,
            payload,
        })
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LinkStats {
    pub bytes: f64,
    pub messages: u64,
    pub drops: u64,
}

/// Cumulative counters per `(sender, receiver, kind)`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LinkLog {
    pub links: BTreeMap<(u64, u64, MessageKind), LinkStats>,
}

impl LinkLog {
    pub fn record(&mut self, m: &Message) {
        let s = self.links.entry((m.sender, m.receiver, m.kind)).or_default();
        s.bytes += m.payload_bytes;
        s.messages += 1;
    }

    pub fn record_drop(&mut self, sender: u64, receiver: u64, kind: MessageKind) {
        self.links.entry((sender, receiver, kind)).or_default().drops += 1;
    }

    pub fn total_drops(&self, kind: MessageKind) -> u64 {
        self.links
            .iter()
            .filter(|((_, _, k), _)| *k == kind)
            .map(|(_, s)| s.drops)
            .sum()
    }
}

/// Megabytes per second, by kind and by link.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BandwidthReport {
    pub feature_mbps: f64,
    pub prediction_mbps: f64,
    pub per_link: Vec<LinkBandwidth>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkBandwidth {
    pub sender: u64,
    pub receiver: u64,
    pub kind: MessageKind,
    pub mbps: f64,
}

pub fn bandwidth_report(log: &LinkLog, duration: f64) -> Result<BandwidthReport> {
    if !(duration > 0.0) {
        return Err(Error::invalid("bandwidth report", "duration must be positive"));
    }
    let mut report = BandwidthReport::default();
    for (&(sender, receiver, kind), s) in &log.links {
        let mbps = s.bytes / duration / 1e6;
        match kind {
            MessageKind::FeatureEvidence => report.feature_mbps += mbps,
            MessageKind::Prediction => report.prediction_mbps += mbps,
        }
        report.per_link.push(LinkBandwidth {
            sender,
            receiver,
            kind,
            mbps,
        });
    }
    Ok(report)
}

/// Arrival time of `m` sent at `send_time`; the message is accounted in `log`.
pub fn transmit(m: &Message, ch: &ChannelConfig, send_time: f64, log: &mut LinkLog) -> f64 {
    log.record(m);
    send_time + ch.transit(m.payload_bytes)
}

#[derive(Debug, Clone, PartialEq)]
pub struct InFlight {
    pub message: Message,
    pub send_time: f64,
    pub arrival: f64,
}

impl InFlight {
    pub fn transit(&self) -> f64 {
        self.arrival - self.send_time
    }
}

/// What a receiver got from one sender for one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Polled<'a> {
    pub message: &'a Message,
    /// `frame - message.frame_sent`.
    pub staleness: usize,
    pub arrival: f64,
    /// The current frame's message existed but missed the deadline.
    pub substituted: bool,
}

/// One slot outcome, kept for audits even when nothing was usable.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlotRecord {
    pub receiver: u64,
    pub sender: u64,
    pub frame: usize,
    pub kind: MessageKind,
    /// Transit of the current frame's message, if one was sent.
    pub current_transit: Option<f64>,
    pub dropped: bool,
    pub used_frame: Option<usize>,
    /// Processing instant of the slot and arrival of the message used.
    pub now: f64,
    pub used_arrival: Option<f64>,
}

/// A single event queue shared by all links.
#[derive(Debug, Clone)]
pub struct Channel {
    pub config: ChannelConfig,
    /// With delay disabled every message arrives the instant it is sent.
    pub delay_enabled: bool,
    pub dt: f64,
    pub log: LinkLog,
    queue: Vec<InFlight>,
}

impl Channel {
    pub fn new(config: ChannelConfig, delay_enabled: bool, dt: f64) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            delay_enabled,
            dt,
            log: LinkLog::default(),
            queue: Vec::new(),
        })
    }

    /// Instant at which frame `frame` is processed.
    pub fn processing_time(&self, frame: usize) -> f64 {
        frame as f64 * self.dt + if self.delay_enabled { self.config.deadline } else { 0.0 }
    }

    pub fn send(&mut self, m: Message, send_time: f64) -> &InFlight {
        let arrival = if self.delay_enabled {
            transmit(&m, &self.config, send_time, &mut self.log)
        } else {
            self.log.record(&m);
            send_time
        };
        self.queue.push(InFlight {
            message: m,
            send_time,
            arrival,
        });
        self.queue.last().expect("just pushed")
    }

    fn deadline(&self) -> f64 {
        if self.delay_enabled {
            self.config.deadline
        } else {
            f64::INFINITY
        }
    }

    /// Freshest usable feature message per sender for `receiver` at `frame`,
    /// applying the deadline rule. Returns the slot records alongside.
    pub fn poll(&mut self, receiver: u64, frame: usize) -> (BTreeMap<u64, Polled<'_>>, Vec<SlotRecord>) {
        let now = self.processing_time(frame);
        let deadline = self.deadline();
        let kind = MessageKind::FeatureEvidence;
        let mut current: BTreeMap<u64, usize> = BTreeMap::new();
        let mut older: BTreeMap<u64, usize> = BTreeMap::new();
        for (i, f) in self.queue.iter().enumerate() {
            let m = &f.message;
            if m.receiver != receiver || m.kind != kind {
                continue;
            }
            if m.frame_sent == frame {
                current.insert(m.sender, i);
            } else if m.frame_sent < frame && f.arrival <= now + TIME_EPS {
                let better = older
                    .get(&m.sender)
                    .is_none_or(|&o| self.queue[o].message.frame_sent < m.frame_sent);
                if better {
                    older.insert(m.sender, i);
                }
            }
        }
        let mut senders: Vec<u64> = current.keys().chain(older.keys()).copied().collect();
        senders.sort_unstable();
        senders.dedup();
        let mut chosen = Vec::new();
        let mut records = Vec::new();
        for s in senders {
            let cur = current.get(&s).map(|&i| &self.queue[i]);
            let on_time = current
                .get(&s)
                .copied()
                .filter(|&i| self.queue[i].transit() <= deadline + TIME_EPS && self.queue[i].arrival <= now + TIME_EPS);
            let dropped = cur.is_some() && on_time.is_none();
            let pick = on_time.or_else(|| older.get(&s).copied());
            records.push(SlotRecord {
                receiver,
                sender: s,
                frame,
                kind,
                current_transit: cur.map(InFlight::transit),
                dropped,
                used_frame: pick.map(|i| self.queue[i].message.frame_sent),
                now,
                used_arrival: pick.map(|i| self.queue[i].arrival),
            });
            if dropped {
                self.log.record_drop(s, receiver, kind);
            }
            if let Some(i) = pick {
                chosen.push((s, i, dropped));
            }
        }
        let out = chosen
            .into_iter()
            .map(|(s, i, substituted)| {
                let f = &self.queue[i];
                let polled = Polled {
                    message: &f.message,
                    staleness: frame - f.message.frame_sent,
                    arrival: f.arrival,
                    substituted,
                };
                (s, polled)
            })
            .collect();
        (out, records)
    }

    /// Prediction bundles for `receiver` at `frame`: only those generated at
    /// `frame - 1` that have arrived. No substitution.
    pub fn poll_predictions(&self, receiver: u64, frame: usize) -> Vec<&InFlight> {
        let Some(prev) = frame.checked_sub(1) else {
            return Vec::new();
        };
        let now = self.processing_time(frame);
        let mut v: Vec<&InFlight> = self
            .queue
            .iter()
            .filter(|f| {
                f.message.receiver == receiver
                    && f.message.kind == MessageKind::Prediction
                    && f.message.frame_sent == prev
                    && f.arrival <= now + TIME_EPS
            })
            .collect();
        v.sort_by_key(|f| f.message.sender);
        v
    }

    /// Forgets messages that can no longer be selected.
    pub fn prune(&mut self, frame: usize, keep_frames: usize) {
        let cutoff = frame.saturating_sub(keep_frames);
        self.queue.retain(|f| f.message.frame_sent >= cutoff);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Pose2D;

    fn feature(sender: u64, receiver: u64, frame: usize, bytes: f64) -> Message {
        let e = DetectionEvidence {
            sender,
            frame,
            pose: Pose2D::origin(),
            boxes: vec![],
            nominal_feature_bytes: bytes,
        };
        Message::new(sender, receiver, frame, bytes, Payload::Feature(e)).unwrap()
    }

    #[test]
    fn transit_arithmetic() {
        let ch = ChannelConfig {
            bandwidth: 1e7,
            base_latency: 0.0,
            deadline: 0.1,
        };
        let mut log = LinkLog::default();
        let arrival = transmit(&feature(1, 2, 0, 1e6), &ch, 0.0, &mut log);
        assert!((arrival - 0.1).abs() < 1e-15);
        assert_eq!(log.links[&(1, 2, MessageKind::FeatureEvidence)].messages, 1);
    }

    #[test]
    fn zero_payload_rejected() {
        let e = DetectionEvidence {
            sender: 1,
            frame: 0,
            pose: Pose2D::origin(),
            boxes: vec![],
            nominal_feature_bytes: 1.0,
        };
        assert!(Message::new(1, 2, 0, 0.0, Payload::Feature(e)).is_err());
    }

    fn channel(bandwidth: f64) -> Channel {
        let cfg = ChannelConfig {
            bandwidth,
            base_latency: 0.0,
            deadline: 0.1,
        };
        Channel::new(cfg, true, 0.1).unwrap()
    }

    #[test]
    fn on_time_message_is_current() {
        let mut ch = channel(2e7);
        ch.send(feature(1, 2, 5, 1e6), 0.5);
        let (got, rec) = ch.poll(2, 5);
        assert_eq!(got[&1].staleness, 0);
        assert!(!rec[0].dropped);
    }

    #[test]
    fn late_message_replaced_by_previous() {
        let mut ch = channel(1e6 / 0.15);
        ch.send(feature(1, 2, 4, 1e6), 0.4);
        ch.send(feature(1, 2, 5, 1e6), 0.5);
        let (got, rec) = ch.poll(2, 5);
        assert_eq!(got[&1].message.frame_sent, 4);
        assert!(got[&1].substituted);
        assert!(rec[0].dropped);
        assert_eq!(ch.log.total_drops(MessageKind::FeatureEvidence), 1);
    }

    #[test]
    fn late_without_history_leaves_sender_out() {
        let mut ch = channel(1e6 / 0.15);
        ch.send(feature(1, 2, 0, 1e6), 0.0);
        let (got, rec) = ch.poll(2, 0);
        assert!(got.is_empty());
        assert!(rec[0].dropped && rec[0].used_frame.is_none());
    }

    #[test]
    fn bandwidth_report_arithmetic() {
        let mut log = LinkLog::default();
        assert_eq!(bandwidth_report(&log, 1.0).unwrap().feature_mbps, 0.0);
        for f in 0..10 {
            log.record(&feature(1, 2, f, 1e6));
        }
        let r = bandwidth_report(&log, 1.0).unwrap();
        assert!((r.feature_mbps - 10.0).abs() < 1e-12);
    }
}
