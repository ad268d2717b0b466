//! Particle MCMC: PMMH and particle iterated filtering (PIF) samplers.
//!
//! Both samplers work on the natural parameter scale with a diagonal
//! Gaussian random-walk proposal. Step `m` draws from `<root>/<m>` with the
//! substreams `propose`, `filter`, `accept` and (PIF only) `score`; the
//! starting likelihood comes from `<root>/init`.

mod ess;
mod sampler;

pub use ess::ess;
pub use sampler::{pif, pif_drift, pmmh};

use crate::error::{PompError, Result};
use crate::model::{fmt_f64, ModelSpec};
use crate::table::RowMatrix;
use serde::{Deserialize, Serialize};
use std::io::Write;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProposalKind {
    #[default]
    MvnDiagRw,
}

/// Random-walk proposal and the PIF drift settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProposalSpec {
    #[serde(default)]
    pub kind: ProposalKind,
    /// Per-parameter proposal sd (natural scale). A zero scale holds the
    /// parameter fixed.
    pub scales: Vec<f64>,
    /// Score step size; 0 turns PIF into PMMH.
    #[serde(default)]
    pub epsilon: f64,
    /// Particles for the score pass; defaults to the sampler's `J`.
    #[serde(default)]
    pub score_particles: Option<usize>,
    /// Walk sd of the score pass as a fraction of the proposal scale.
    #[serde(default = "default_walk_fraction")]
    pub score_walk_fraction: f64,
    /// Time-0 sd of the score pass as a multiple of its walk sd.
    #[serde(default = "default_score_multiplier")]
    pub score_init_multiplier: f64,
}

fn default_walk_fraction() -> f64 {
    0.01
}

fn default_score_multiplier() -> f64 {
    100.0
}

impl ProposalSpec {
    pub fn mvn_diag_rw(scales: Vec<f64>) -> Self {
        ProposalSpec {
            kind: ProposalKind::MvnDiagRw,
            scales,
            epsilon: 0.0,
            score_particles: None,
            score_walk_fraction: default_walk_fraction(),
            score_init_multiplier: default_score_multiplier(),
        }
    }

    /// Scales by parameter name; unnamed parameters are held fixed.
    pub fn for_model(model: &ModelSpec, scales: &[(&str, f64)]) -> Result<Self> {
        let mut v = vec![0.0; model.n_params()];
        for (name, s) in scales {
            let i = model
                .param_index(name)
                .ok_or_else(|| PompError::InvalidArgument(format!("unknown parameter `{name}`")))?;
            v[i] = *s;
        }
        Ok(Self::mvn_diag_rw(v))
    }

    pub fn with_epsilon(mut self, epsilon: f64) -> Self {
        self.epsilon = epsilon;
        self
    }

    pub fn validate(&self, p: usize) -> Result<()> {
        let mut errs = Vec::new();
        if self.scales.len() != p {
            errs.push(format!("{} proposal scales for {p} parameters", self.scales.len()));
        }
        if self.scales.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
            errs.push("proposal scales must be finite and >= 0".to_string());
        }
        if !(self.epsilon.is_finite() && self.epsilon >= 0.0) {
            errs.push(format!("score step size must be >= 0, got {}", self.epsilon));
        }
        if self.score_particles == Some(0) {
            errs.push("score_particles must be at least 1".to_string());
        }
        if !(self.score_walk_fraction.is_finite() && self.score_walk_fraction > 0.0) {
            errs.push("score_walk_fraction must be positive".to_string());
        }
        if !(self.score_init_multiplier.is_finite() && self.score_init_multiplier > 0.0) {
            errs.push("score_init_multiplier must be positive".to_string());
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(PompError::Validation(errs))
        }
    }

    /// Coordinates that move.
    pub fn active(&self) -> Vec<usize> {
        (0..self.scales.len()).filter(|&i| self.scales[i] > 0.0).collect()
    }
}

/// Output of a sampler. Row `m - 1` holds the state after step `m`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Chain {
    pub algorithm: String,
    pub param_names: Vec<String>,
    pub theta0: Vec<f64>,
    pub loglik0: f64,
    /// `M x p` samples (natural scale).
    pub samples: RowMatrix,
    pub loglik: Vec<f64>,
    pub logprior: Vec<f64>,
    pub accepted: Vec<bool>,
    pub proposal: ProposalSpec,
}

impl Chain {
    pub fn len(&self) -> usize {
        self.samples.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn acceptance_rate(&self) -> f64 {
        if self.accepted.is_empty() {
            return 0.0;
        }
        self.accepted.iter().filter(|a| **a).count() as f64 / self.accepted.len() as f64
    }

    /// Samples of parameter `i` after discarding the first `burn_in` rows.
    pub fn trace(&self, i: usize, burn_in: usize) -> Vec<f64> {
        self.samples.column(i).into_iter().skip(burn_in).collect()
    }

    /// ESS of every parameter after burn-in; parameters that never move get 0.
    pub fn ess(&self, burn_in: usize) -> Result<Vec<f64>> {
        (0..self.samples.cols())
            .map(|i| if self.proposal.scales[i] > 0.0 { ess(&self.trace(i, burn_in)) } else { Ok(0.0) })
            .collect()
    }

    /// CSV: `m,accepted,loglik,logprior,theta_1..p`.
    pub fn write_csv<W: Write>(&self, mut w: W, comments: &[String]) -> Result<()> {
        for c in comments {
            writeln!(w, "# {c}")?;
        }
        let p = self.samples.cols();
        let mut header = vec!["m".into(), "accepted".into(), "loglik".into(), "logprior".into()];
        header.extend((1..=p).map(|i| format!("theta_{i}")));
        writeln!(w, "{}", header.join(","))?;
        for (k, row) in self.samples.iter_rows().enumerate() {
            let mut line = format!(
                "{},{},{},{}",
                k + 1,
                u8::from(self.accepted[k]),
                fmt_f64(self.loglik[k]),
                fmt_f64(self.logprior[k])
            );
            for v in row {
                line.push(',');
                line.push_str(&fmt_f64(*v));
            }
            writeln!(w, "{line}")?;
        }
        Ok(())
    }
}
