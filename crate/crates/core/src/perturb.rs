//! Parameter perturbation settings and the geometric cooling schedule.

use crate::error::{PompError, Result};
use crate::model::ModelSpec;
use serde::{Deserialize, Serialize};

/// Random-walk perturbation settings shared by the iterated algorithms.
///
/// Scales are on the estimation (transformed) scale. `ivp` holds the 0-based
/// positions of initial-value parameters, which are perturbed only at time 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbationSpec {
    pub sigma: Vec<f64>,
    /// Cooling rate `a`.
    pub cooling: f64,
    /// Initial scale multiplier `C`.
    pub init_multiplier: f64,
    pub ivp: Vec<usize>,
    /// Fixed lag used for smoothing and IVP estimation.
    pub lag: usize,
}

impl PerturbationSpec {
    /// Scales given by name; unnamed parameters get scale 0. IVPs come from the model.
    pub fn for_model(model: &ModelSpec, scales: &[(&str, f64)], cooling: f64, init_multiplier: f64) -> Result<Self> {
        let mut sigma = vec![0.0; model.n_params()];
        for (name, s) in scales {
            let i = model
                .param_index(name)
                .ok_or_else(|| PompError::InvalidArgument(format!("unknown parameter `{name}`")))?;
            sigma[i] = *s;
        }
        let spec = PerturbationSpec {
            sigma,
            cooling,
            init_multiplier,
            ivp: model.ivp_indices.clone(),
            lag: 0,
        };
        spec.validate(model.n_params())?;
        Ok(spec)
    }

    pub fn with_lag(mut self, lag: usize) -> Self {
        self.lag = lag;
        self
    }

    /// `C = 0` is accepted: it collapses the time-0 swarm onto the center.
    pub fn validate(&self, p: usize) -> Result<()> {
        let mut errs = Vec::new();
        if self.sigma.len() != p {
            errs.push(format!("{} perturbation scales for {p} parameters", self.sigma.len()));
        }
        if self.sigma.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
            errs.push("perturbation scales must be finite and >= 0".to_string());
        }
        if !(self.cooling > 0.0 && self.cooling < 1.0) {
            errs.push(format!("cooling rate must lie in (0, 1), got {}", self.cooling));
        }
        if !(self.init_multiplier.is_finite() && self.init_multiplier >= 0.0) {
            errs.push(format!("initial scale multiplier must be >= 0, got {}", self.init_multiplier));
        }
        if let Some(i) = self.ivp.iter().find(|&&i| i >= p) {
            errs.push(format!("IVP index {i} out of range"));
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(PompError::Validation(errs))
        }
    }

    pub fn ivp_mask(&self, p: usize) -> Vec<bool> {
        let mut m = vec![false; p];
        for &i in &self.ivp {
            m[i] = true;
        }
        m
    }

    /// Walk standard deviations at iteration `m` (0 for IVPs).
    pub fn walk_sd(&self, m: usize) -> Vec<f64> {
        let (_, walk) = cooling(self.cooling, self.init_multiplier, m);
        let mask = self.ivp_mask(self.sigma.len());
        self.sigma
            .iter()
            .zip(mask)
            .map(|(s, ivp)| if ivp { 0.0 } else { s * walk })
            .collect()
    }

    /// Time-0 swarm standard deviations at iteration `m`.
    pub fn init_sd(&self, m: usize) -> Vec<f64> {
        let (swarm, _) = cooling(self.cooling, self.init_multiplier, m);
        self.sigma.iter().map(|s| s * swarm).collect()
    }

    /// Non-IVP coordinates with a positive scale; these are the ones the
    /// score and information estimates cover.
    pub fn active(&self) -> Vec<usize> {
        let mask = self.ivp_mask(self.sigma.len());
        (0..self.sigma.len()).filter(|&i| !mask[i] && self.sigma[i] > 0.0).collect()
    }
}

/// Geometric cooling: returns `(C a^(m-1), a^(m-1))` for iteration `m >= 1`.
pub fn cooling(a: f64, c: f64, m: usize) -> (f64, f64) {
    assert!(m >= 1, "iterations are numbered from 1");
    let walk = a.powi(m as i32 - 1);
    (c * walk, walk)
}

/// Cooling rate that takes a scale from `from` at iteration 1 to `to` at iteration `m`.
pub fn cooling_rate_between(from: f64, to: f64, m: usize) -> f64 {
    (to / from).powf(1.0 / (m as f64 - 1.0))
}
