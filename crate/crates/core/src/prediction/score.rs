//! Hard-assignment negative log-likelihood score of a mixture forecast.

use crate::error::{Error, Result};
use crate::gmm::GmmTrajectory;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PredictionScore {
    /// Component whose final mean is closest to the true endpoint.
    pub selected: usize,
    /// Mean over steps of `-log N_selected(gt)`.
    pub nll: f64,
    /// `-log p_selected`.
    pub cls: f64,
    pub total: f64,
}

pub fn prediction_score(g: &GmmTrajectory, gt: &[(f64, f64)], w_loc: f64, w_cls: f64) -> Result<PredictionScore> {
    if gt.len() != g.horizon() {
        return Err(Error::invalid(
            "prediction score",
            format!("ground truth has {} steps, forecast has {}", gt.len(), g.horizon()),
        ));
    }
    let last = g.steps.last().ok_or_else(|| Error::invalid("prediction score", "empty forecast"))?;
    let end = gt[gt.len() - 1];
    let selected = last
        .components
        .iter()
        .enumerate()
        .map(|(k, c)| (k, (c.mu_x - end.0).hypot(c.mu_y - end.1)))
        .fold((0, f64::INFINITY), |acc, (k, d)| if d < acc.1 { (k, d) } else { acc })
        .0;
    let nll = g
        .steps
        .iter()
        .zip(gt)
        .map(|(s, &(x, y))| -s.components[selected].log_pdf(x, y))
        .sum::<f64>()
        / gt.len() as f64;
    let cls = -g.steps[0].components[selected].p.ln();
    Ok(PredictionScore {
        selected,
        nll,
        cls,
        total: w_loc * nll + w_cls * cls,
    })
}
