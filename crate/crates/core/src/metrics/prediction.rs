//! Displacement errors of multi-modal forecasts.

use crate::error::{Error, Result};
use crate::gmm::GmmTrajectory;
use serde::{Deserialize, Serialize};

/// Evaluation horizons in steps (1 s, 3 s, 5 s at 10 Hz).
pub const HORIZON_STEPS: [usize; 3] = [10, 30, 50];
pub const TOP_MODES: usize = 6;

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct AdeFde {
    pub ade: [f64; 3],
    pub fde: [f64; 3],
}

/// Indices of the `k` heaviest components (first-step weights), ties broken
/// by index.
pub fn top_modes(g: &GmmTrajectory, k: usize) -> Vec<usize> {
    let w = g.weights();
    let mut idx: Vec<usize> = (0..w.len()).collect();
    idx.sort_by(|&a, &b| w[b].total_cmp(&w[a]).then(a.cmp(&b)));
    idx.truncate(k);
    idx
}

/// minADE_k / minFDE_k at each horizon (in steps). Each horizon takes its
/// own best mode.
pub fn prediction_ade_fde(pred: &GmmTrajectory, gt: &[(f64, f64)], horizons: [usize; 3], k: usize) -> Result<AdeFde> {
    let longest = horizons.iter().copied().max().unwrap_or(0);
    if longest > pred.horizon() {
        return Err(Error::invalid("horizon", format!("{longest} steps beyond forecast of {}", pred.horizon())));
    }
    if gt.len() < longest {
        return Err(Error::invalid("ground truth", format!("{} steps, need {longest}", gt.len())));
    }
    let modes = top_modes(pred, k);
    let errors: Vec<Vec<f64>> = modes
        .iter()
        .map(|&m| {
            (0..longest)
                .map(|s| {
                    let c = &pred.steps[s].components[m];
                    (c.mu_x - gt[s].0).hypot(c.mu_y - gt[s].1)
                })
                .collect()
        })
        .collect();
    let mut out = AdeFde::default();
    for (i, &h) in horizons.iter().enumerate() {
        if h == 0 {
            return Err(Error::invalid("horizon", "must be at least one step"));
        }
        out.ade[i] = errors
            .iter()
            .map(|e| e[..h].iter().sum::<f64>() / h as f64)
            .fold(f64::INFINITY, f64::min);
        out.fde[i] = errors.iter().map(|e| e[h - 1]).fold(f64::INFINITY, f64::min);
    }
    Ok(out)
}

/// Running means of displacement errors plus the count of ground-truth
/// agents that had no forecast.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PredictionEval {
    pub min_ade: [f64; 3],
    pub min_fde: [f64; 3],
    pub evaluated: usize,
    pub missed: usize,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct PredictionAccumulator {
    sum_ade: [f64; 3],
    sum_fde: [f64; 3],
    pub evaluated: usize,
    pub missed: usize,
}

impl PredictionAccumulator {
    pub fn add(&mut self, r: &AdeFde) {
        for i in 0..3 {
            self.sum_ade[i] += r.ade[i];
            self.sum_fde[i] += r.fde[i];
        }
        self.evaluated += 1;
    }

    pub fn add_miss(&mut self) {
        self.missed += 1;
    }

    pub fn merge(&mut self, o: &PredictionAccumulator) {
        for i in 0..3 {
            self.sum_ade[i] += o.sum_ade[i];
            self.sum_fde[i] += o.sum_fde[i];
        }
        self.evaluated += o.evaluated;
        self.missed += o.missed;
    }

    pub fn eval(&self) -> PredictionEval {
        let n = self.evaluated.max(1) as f64;
        PredictionEval {
            min_ade: self.sum_ade.map(|s| s / n),
            min_fde: self.sum_fde.map(|s| s / n),
            evaluated: self.evaluated,
            missed: self.missed,
        }
    }
}
