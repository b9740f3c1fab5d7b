//! Per-step Gaussian mixtures over future agent positions.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// Tolerance on the per-step weight simplex.
pub const WEIGHT_SUM_TOL: f64 = 1e-9;

/// One weighted bivariate Gaussian `(p, mu_x, mu_y, sigma_x, sigma_y, rho)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GmmComponent {
    pub p: f64,
    pub mu_x: f64,
    pub mu_y: f64,
    pub sigma_x: f64,
    pub sigma_y: f64,
    pub rho: f64,
}

impl GmmComponent {
    pub fn isotropic(p: f64, mu_x: f64, mu_y: f64, sigma: f64) -> Self {
        Self {
            p,
            mu_x,
            mu_y,
            sigma_x: sigma,
            sigma_y: sigma,
            rho: 0.0,
        }
    }

    pub fn is_valid(&self) -> bool {
        self.p >= 0.0
            && self.p.is_finite()
            && self.mu_x.is_finite()
            && self.mu_y.is_finite()
            && self.sigma_x > 0.0
            && self.sigma_y > 0.0
            && self.rho.abs() < 1.0
    }

    /// Unweighted bivariate normal density at `(x, y)`.
    pub fn pdf(&self, x: f64, y: f64) -> f64 {
        let zx = (x - self.mu_x) / self.sigma_x;
        let zy = (y - self.mu_y) / self.sigma_y;
        let one_minus = 1.0 - self.rho * self.rho;
        let q = zx * zx - 2.0 * self.rho * zx * zy + zy * zy;
        (-q / (2.0 * one_minus)).exp() / (2.0 * PI * self.sigma_x * self.sigma_y * one_minus.sqrt())
    }

    /// Natural log of [`GmmComponent::pdf`], computed without underflow.
    pub fn log_pdf(&self, x: f64, y: f64) -> f64 {
        let zx = (x - self.mu_x) / self.sigma_x;
        let zy = (y - self.mu_y) / self.sigma_y;
        let one_minus = 1.0 - self.rho * self.rho;
        let q = zx * zx - 2.0 * self.rho * zx * zy + zy * zy;
        -q / (2.0 * one_minus) - (2.0 * PI * self.sigma_x * self.sigma_y).ln() - 0.5 * one_minus.ln()
    }
}

/// The `K` components describing one future time step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GmmStep {
    pub components: Vec<GmmComponent>,
}

impl GmmStep {
    pub fn new(components: Vec<GmmComponent>) -> Result<Self> {
        let step = Self { components };
        step.validate()?;
        Ok(step)
    }

    pub fn validate(&self) -> Result<()> {
        if self.components.is_empty() {
            return Err(Error::invalid("gmm step", "no components"));
        }
        if let Some(i) = self.components.iter().position(|c| !c.is_valid()) {
            return Err(Error::invalid("gmm step", format!("component {i} out of domain")));
        }
        let sum = self.weight_sum();
        if (sum - 1.0).abs() > WEIGHT_SUM_TOL {
            return Err(Error::invalid("gmm step", format!("weights sum to {sum}, expected 1")));
        }
        Ok(())
    }

    pub fn weight_sum(&self) -> f64 {
        self.components.iter().map(|c| c.p).sum()
    }

    pub fn k(&self) -> usize {
        self.components.len()
    }

    /// Weighted mean of the mixture.
    pub fn mean(&self) -> (f64, f64) {
        let w = self.weight_sum();
        let (mx, my) = self
            .components
            .iter()
            .fold((0.0, 0.0), |(ax, ay), c| (ax + c.p * c.mu_x, ay + c.p * c.mu_y));
        (mx / w, my / w)
    }
}

/// Mixture density at `point`; the step must carry normalized weights.
pub fn gmm_density(point: (f64, f64), step: &GmmStep) -> Result<f64> {
    step.validate()?;
    Ok(step
        .components
        .iter()
        .map(|c| c.p * c.pdf(point.0, point.1))
        .sum())
}

/// A multi-modal forecast for one agent: `T_f` steps of `K` components.
///
/// Component `k` keeps its identity across the whole horizon.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GmmTrajectory {
    pub agent_id: u64,
    pub t_generated: usize,
    pub steps: Vec<GmmStep>,
}

impl GmmTrajectory {
    pub fn new(agent_id: u64, t_generated: usize, steps: Vec<GmmStep>) -> Result<Self> {
        let g = Self {
            agent_id,
            t_generated,
            steps,
        };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        let Some(first) = self.steps.first() else {
            return Err(Error::invalid("gmm trajectory", "empty horizon"));
        };
        let k = first.k();
        for (i, s) in self.steps.iter().enumerate() {
            if s.k() != k {
                return Err(Error::invalid(
                    "gmm trajectory",
                    format!("step {i} has {} components, expected {k}", s.k()),
                ));
            }
            s.validate()?;
        }
        Ok(())
    }

    pub fn k(&self) -> usize {
        self.steps.first().map_or(0, GmmStep::k)
    }

    pub fn horizon(&self) -> usize {
        self.steps.len()
    }

    /// Mean of component `k` at every step.
    pub fn mode(&self, k: usize) -> Vec<(f64, f64)> {
        self.steps
            .iter()
            .map(|s| (s.components[k].mu_x, s.components[k].mu_y))
            .collect()
    }

    /// Component weights at the first step.
    pub fn weights(&self) -> Vec<f64> {
        self.steps
            .first()
            .map(|s| s.components.iter().map(|c| c.p).collect())
            .unwrap_or_default()
    }

    /// Applies a rigid map to every component mean and rotates covariances.
    pub fn map_rigid(&self, rotation: f64, tx: f64, ty: f64) -> GmmTrajectory {
        let (s, c) = rotation.sin_cos();
        let steps = self
            .steps
            .iter()
            .map(|st| GmmStep {
                components: st
                    .components
                    .iter()
                    .map(|comp| rotate_component(comp, s, c, tx, ty))
                    .collect(),
            })
            .collect();
        GmmTrajectory {
            agent_id: self.agent_id,
            t_generated: self.t_generated,
            steps,
        }
    }
}

fn rotate_component(comp: &GmmComponent, s: f64, c: f64, tx: f64, ty: f64) -> GmmComponent {
    let mx = c * comp.mu_x - s * comp.mu_y + tx;
    let my = s * comp.mu_x + c * comp.mu_y + ty;
    let sxx = comp.sigma_x * comp.sigma_x;
    let syy = comp.sigma_y * comp.sigma_y;
    let sxy = comp.rho * comp.sigma_x * comp.sigma_y;
    // R S R^T
    let nxx = c * c * sxx - 2.0 * c * s * sxy + s * s * syy;
    let nyy = s * s * sxx + 2.0 * c * s * sxy + c * c * syy;
    let nxy = c * s * (sxx - syy) + (c * c - s * s) * sxy;
    let sx = nxx.max(1e-18).sqrt();
    let sy = nyy.max(1e-18).sqrt();
    GmmComponent {
        p: comp.p,
        mu_x: mx,
        mu_y: my,
        sigma_x: sx,
        sigma_y: sy,
        rho: (nxy / (sx * sy)).clamp(-0.999_999, 0.999_999),
    }
}
