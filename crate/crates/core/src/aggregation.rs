//! Cross-CAV forecast aggregation. Remote forecasts arrive one frame late;
//! they are shifted onto the current frame, matched to the ego's tracks and
//! pooled with the ego forecast under reliability-based source weights.
//!
//! All forecasts are expressed in the shared world frame.

use crate::error::{Error, Result};
use crate::geometry::Pose2D;
use crate::gmm::{GmmComponent, GmmStep, GmmTrajectory};
use serde::{Deserialize, Serialize};
use std::cmp::Ordering;
use std::collections::BTreeMap;

/// Fixed per-bundle header: sender, frame, pose and counts.
pub const BUNDLE_HEADER_BYTES: f64 = 64.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AggregationConfig {
    /// Source-weight decay per metre of CAV-agent distance.
    pub alpha: f64,
    /// Source-weight gain per unit of mean detection score.
    pub beta: f64,
    /// Components whose means stay within this distance at every step are
    /// merged, metres.
    pub merge_eps: f64,
    /// Matching gate between ego tracks and remote agents, metres.
    pub match_gate: f64,
}

impl Default for AggregationConfig {
    fn default() -> Self {
        Self {
            alpha: 0.05,
            beta: 1.0,
            merge_eps: 4.0,
            match_gate: 3.0,
        }
    }
}

impl AggregationConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0) || !self.beta.is_finite() || !(self.merge_eps >= 0.0) || !(self.match_gate > 0.0) {
            return Err(Error::invalid(
                "aggregation config",
                "alpha >= 0, finite beta, merge_eps >= 0 and match_gate > 0 required",
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReliabilityFeatures {
    pub cav_agent_distance: f64,
    /// Mean detection score over the agent's track, in `[0, 1]`.
    pub score: f64,
    pub track_length: usize,
}

/// One agent's forecast as shared by a CAV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentForecast {
    pub trajectory: GmmTrajectory,
    /// Agent position at generation time.
    pub position: (f64, f64),
    pub reliability: ReliabilityFeatures,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionBundle {
    pub sender: u64,
    pub frame_generated: usize,
    pub sender_pose: Pose2D,
    pub forecasts: Vec<AgentForecast>,
}

impl PredictionBundle {
    pub fn validate(&self) -> Result<()> {
        let mut shape = None;
        for f in &self.forecasts {
            let s = (f.trajectory.k(), f.trajectory.horizon());
            if *shape.get_or_insert(s) != s {
                return Err(Error::invalid("prediction bundle", "forecasts disagree on K or T_f"));
            }
        }
        Ok(())
    }

    /// Wire size: six 4-byte floats per component per step, plus a header.
    pub fn payload_bytes(&self) -> f64 {
        let body: usize = self
            .forecasts
            .iter()
            .map(|f| f.trajectory.k() * f.trajectory.horizon() * 6 * 4)
            .sum();
        body as f64 + BUNDLE_HEADER_BYTES
    }
}

/// Shifts a forecast generated at `target_frame - 1` onto `target_frame`:
/// the first step is dropped and one constant-velocity step is appended.
pub fn align_delayed(remote: &GmmTrajectory, target_frame: usize) -> Result<GmmTrajectory> {
    if remote.t_generated + 1 != target_frame {
        return Err(Error::invalid(
            "delayed forecast",
            format!(
                "generated at frame {}, expected {}",
                remote.t_generated,
                target_frame.saturating_sub(1)
            ),
        ));
    }
    let n = remote.steps.len();
    let last = &remote.steps[n - 1];
    let extra = GmmStep {
        components: last
            .components
            .iter()
            .enumerate()
            .map(|(k, c)| {
                let Some(prev) = n.checked_sub(2).map(|i| remote.steps[i].components[k]) else {
                    return *c;
                };
                GmmComponent {
                    mu_x: c.mu_x + (c.mu_x - prev.mu_x),
                    mu_y: c.mu_y + (c.mu_y - prev.mu_y),
                    sigma_x: (c.sigma_x + (c.sigma_x - prev.sigma_x)).max(c.sigma_x),
                    sigma_y: (c.sigma_y + (c.sigma_y - prev.sigma_y)).max(c.sigma_y),
                    ..*c
                }
            })
            .collect(),
    };
    let mut steps: Vec<GmmStep> = remote.steps[1..].to_vec();
    steps.push(extra);
    Ok(GmmTrajectory {
        agent_id: remote.agent_id,
        t_generated: target_frame,
        steps,
    })
}

/// Greedy one-to-one nearest matching within `gate`. Returns ego id ->
/// remote id.
pub fn match_agents(ego: &[(u64, (f64, f64))], remote: &[(u64, (f64, f64))], gate: f64) -> BTreeMap<u64, u64> {
    let mut pairs: Vec<(f64, u64, u64)> = Vec::new();
    for &(e, pe) in ego {
        for &(r, pr) in remote {
            let d = (pe.0 - pr.0).hypot(pe.1 - pr.1);
            if d <= gate {
                pairs.push((d, e, r));
            }
        }
    }
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut out = BTreeMap::new();
    let mut used_remote = std::collections::BTreeSet::new();
    for (_, e, r) in pairs {
        if out.contains_key(&e) || used_remote.contains(&r) {
            continue;
        }
        out.insert(e, r);
        used_remote.insert(r);
    }
    out
}

/// Normalized source weights `exp(-alpha d + beta s)`.
pub fn source_weights(rel: &[ReliabilityFeatures], cfg: &AggregationConfig) -> Vec<f64> {
    let logits: Vec<f64> = rel
        .iter()
        .map(|r| -cfg.alpha * r.cav_agent_distance + cfg.beta * r.score)
        .collect();
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let total = order_free_sum(&exps);
    exps.iter().map(|e| e / total).collect()
}

/// Sum that does not depend on input order.
fn order_free_sum(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    v.iter().sum()
}

struct Candidate<'a> {
    source: usize,
    k: usize,
    weight: f64,
    traj: &'a GmmTrajectory,
}

impl Candidate<'_> {
    fn comp(&self, step: usize) -> &GmmComponent {
        &self.traj.steps[step].components[self.k]
    }

    /// Content-only ordering: heavier first, then by means. Ties between
    /// content-identical candidates are harmless since they merge alike.
    fn cmp_content(&self, other: &Self) -> Ordering {
        other.weight.total_cmp(&self.weight).then_with(|| {
            for s in 0..self.traj.steps.len() {
                let (a, b) = (self.comp(s), other.comp(s));
                let o = a
                    .mu_x
                    .total_cmp(&b.mu_x)
                    .then(a.mu_y.total_cmp(&b.mu_y))
                    .then(a.sigma_x.total_cmp(&b.sigma_x))
                    .then(a.sigma_y.total_cmp(&b.sigma_y))
                    .then(a.rho.total_cmp(&b.rho));
                if o != Ordering::Equal {
                    return o;
                }
            }
            Ordering::Equal
        })
    }
}

fn max_mean_gap(a: &Candidate, b: &Candidate) -> f64 {
    (0..a.traj.steps.len())
        .map(|s| {
            let (x, y) = (a.comp(s), b.comp(s));
            (x.mu_x - y.mu_x).hypot(x.mu_y - y.mu_y)
        })
        .fold(0.0, f64::max)
}

/// Moment-matched merge of weighted components.
fn merge(parts: &[(f64, GmmComponent)]) -> (f64, GmmComponent) {
    if let [(w, c)] = parts {
        return (*w, *c);
    }
    let w: f64 = order_free_sum(&parts.iter().map(|p| p.0).collect::<Vec<_>>());
    let mx = parts.iter().map(|(wi, c)| wi * c.mu_x).sum::<f64>() / w;
    let my = parts.iter().map(|(wi, c)| wi * c.mu_y).sum::<f64>() / w;
    let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
    for (wi, c) in parts {
        let (dx, dy) = (c.mu_x - mx, c.mu_y - my);
        sxx += wi * (c.sigma_x * c.sigma_x + dx * dx);
        syy += wi * (c.sigma_y * c.sigma_y + dy * dy);
        sxy += wi * (c.rho * c.sigma_x * c.sigma_y + dx * dy);
    }
    let (sx, sy) = ((sxx / w).sqrt(), (syy / w).sqrt());
    (
        w,
        GmmComponent {
            p: w,
            mu_x: mx,
            mu_y: my,
            sigma_x: sx,
            sigma_y: sy,
            rho: (sxy / w / (sx * sy)).clamp(-0.999_999, 0.999_999),
        },
    )
}

/// Fuses the ego forecast with aligned remote forecasts of the same agent.
///
/// `rel[0]` describes the ego, `rel[i + 1]` describes `remotes[i]`. The
/// result keeps the ego's `K` and horizon, agent id and generation frame.
pub fn aggregate(
    ego: &GmmTrajectory,
    remotes: &[GmmTrajectory],
    rel: &[ReliabilityFeatures],
    cfg: &AggregationConfig,
) -> Result<GmmTrajectory> {
    if rel.len() != remotes.len() + 1 {
        return Err(Error::invalid("aggregation", "one reliability entry per source required"));
    }
    let k_out = ego.k();
    if remotes.iter().any(|r| r.k() != k_out || r.horizon() != ego.horizon()) {
        return Err(Error::invalid("aggregation", "sources disagree on K or T_f"));
    }
    if remotes.is_empty() {
        return Ok(ego.clone());
    }
    let w_src = source_weights(rel, cfg);
    let sources: Vec<&GmmTrajectory> = std::iter::once(ego).chain(remotes).collect();
    let mut pool: Vec<Candidate> = Vec::with_capacity(sources.len() * k_out);
    for (s, traj) in sources.iter().enumerate() {
        for k in 0..k_out {
            pool.push(Candidate {
                source: s,
                k,
                weight: traj.steps[0].components[k].p * w_src[s],
                traj,
            });
        }
    }
    pool.sort_by(|a, b| a.cmp_content(b).then(a.source.cmp(&b.source)).then(a.k.cmp(&b.k)));

    // Clusters hold pool indices; the first member is the seed.
    let mut clusters: Vec<Vec<usize>> = Vec::new();
    for i in 0..pool.len() {
        let home = clusters.iter().position(|members| {
            let seed = &pool[members[0]];
            members.iter().all(|&m| pool[m].source != pool[i].source) && max_mean_gap(seed, &pool[i]) <= cfg.merge_eps
        });
        match home {
            Some(c) => clusters[c].push(i),
            None => clusters.push(vec![i]),
        }
    }

    let horizon = ego.horizon();
    let merged: Vec<(f64, Vec<GmmComponent>, usize)> = clusters
        .iter()
        .map(|members| {
            let steps: Vec<(f64, GmmComponent)> = (0..horizon)
                .map(|s| {
                    let parts: Vec<(f64, GmmComponent)> = members
                        .iter()
                        .map(|&m| {
                            let c = &pool[m];
                            let comp = *c.comp(s);
                            (comp.p * w_src[c.source], comp)
                        })
                        .collect();
                    merge(&parts)
                })
                .collect();
            let ego_rank = members
                .iter()
                .filter(|&&m| pool[m].source == 0)
                .map(|&m| pool[m].k)
                .min()
                .unwrap_or(usize::MAX);
            (steps[0].0, steps.into_iter().map(|(_, c)| c).collect(), ego_rank)
        })
        .collect();

    // Top-K by weight; clusters are already in content order, so a stable
    // sort settles ties deterministically.
    let mut order: Vec<usize> = (0..merged.len()).collect();
    order.sort_by(|&a, &b| merged[b].0.total_cmp(&merged[a].0));
    order.truncate(k_out);
    order.sort_by_key(|&i| (merged[i].2, i));

    let steps = (0..horizon)
        .map(|s| {
            let total = order_free_sum(&order.iter().map(|&i| merged[i].1[s].p).collect::<Vec<_>>());
            GmmStep {
                components: order
                    .iter()
                    .map(|&i| {
                        let c = merged[i].1[s];
                        GmmComponent { p: c.p / total, ..c }
                    })
                    .collect(),
            }
        })
        .collect();
    GmmTrajectory::new(ego.agent_id, ego.t_generated, steps)
}
