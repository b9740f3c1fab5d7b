//! Consistency checks over a run log: message timing and causality.

use super::RunLog;
use crate::v2x::MessageKind;
use serde::{Deserialize, Serialize};

const TIME_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub checked: usize,
    pub violations: Vec<String>,
}

impl AuditReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Every consumed prediction bundle was generated exactly one frame before
/// the frame that consumed it.
pub fn audit_prediction_timing(log: &RunLog) -> AuditReport {
    let mut r = AuditReport::default();
    for ego in &log.egos {
        for f in &ego.frames {
            for b in &f.consumed_bundles {
                r.checked += 1;
                if b.frame_generated + 1 != f.frame {
                    r.violations.push(format!(
                        "ego {} frame {} consumed bundle of {} from frame {}",
                        ego.cav, f.frame, b.sender, b.frame_generated
                    ));
                }
            }
        }
    }
    r
}

/// Whenever the current frame's feature message exceeded the deadline it
/// was dropped and the previous frame's message (if any) used instead.
pub fn audit_feature_substitution(log: &RunLog) -> AuditReport {
    let deadline = log.config.channel.deadline;
    let mut r = AuditReport::default();
    for s in log.slots.iter().filter(|s| s.kind == MessageKind::FeatureEvidence) {
        let Some(transit) = s.current_transit else {
            continue;
        };
        if !log.config.delay_enabled || transit <= deadline + TIME_EPS {
            continue;
        }
        r.checked += 1;
        let expected = s.frame.checked_sub(1);
        if !s.dropped || s.used_frame != expected {
            r.violations.push(format!(
                "{} -> {} frame {}: transit {:.4}s, dropped {}, used {:?}",
                s.sender, s.receiver, s.frame, transit, s.dropped, s.used_frame
            ));
        }
    }
    r
}

/// No message was used before it arrived.
pub fn audit_causality(log: &RunLog) -> AuditReport {
    let mut r = AuditReport::default();
    for s in &log.slots {
        let Some(arrival) = s.used_arrival else {
            continue;
        };
        r.checked += 1;
        if arrival > s.now + TIME_EPS {
            r.violations.push(format!(
                "{} -> {} frame {}: used message arriving at {arrival:.4}s, processed at {:.4}s",
                s.sender, s.receiver, s.frame, s.now
            ));
        }
    }
    for m in log.messages.iter().filter(|m| m.kind == MessageKind::Prediction) {
        r.checked += 1;
        let consumed_at = (m.frame_sent + 1) as f64 * log.dt
            + if log.config.delay_enabled { log.config.channel.deadline } else { 0.0 };
        let consumed = log
            .ego(m.receiver)
            .and_then(|e| e.frames.get(m.frame_sent + 1))
            .is_some_and(|f| f.consumed_bundles.iter().any(|b| b.sender == m.sender));
        if consumed && m.arrival > consumed_at + TIME_EPS {
            r.violations.push(format!(
                "bundle {} -> {} of frame {} consumed before arrival",
                m.sender, m.receiver, m.frame_sent
            ));
        }
    }
    r
}
