use super::registry::Registry;
use crate::error::{PompError, Result};
use crate::optimizers::{AccelSequences, Is2Form};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    Simulate,
    Pfilter,
    Psmooth,
    If1,
    If2,
    Is2,
    Momentum,
    Aif,
    Avif,
    Pmmh,
    Pif,
    Kalman,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::Pfilter => "pfilter",
            Command::Psmooth => "psmooth",
            Command::If1 => "if1",
            Command::If2 => "if2",
            Command::Is2 => "is2",
            Command::Momentum => "momentum",
            Command::Aif => "aif",
            Command::Avif => "avif",
            Command::Pmmh => "pmmh",
            Command::Pif => "pif",
            Command::Kalman => "kalman",
        }
    }

    pub fn is_optimizer(self) -> bool {
        matches!(
            self,
            Command::If1 | Command::If2 | Command::Is2 | Command::Momentum | Command::Aif | Command::Avif
        )
    }

    pub fn is_sampler(self) -> bool {
        matches!(self, Command::Pmmh | Command::Pif)
    }

    fn needs_particles(self) -> bool {
        !matches!(self, Command::Simulate | Command::Kalman)
    }
}

/// A single experiment: one command run over `replicates.count` replicates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: String,
    pub command: Command,
    #[serde(default = "default_seed")]
    pub seed: u64,
    /// Observation file. When absent the data are simulated at the model's
    /// default parameters with `data_seed`.
    #[serde(default)]
    pub data: Option<PathBuf>,
    #[serde(default = "default_seed")]
    pub data_seed: u64,
    /// Series length for simulated data.
    #[serde(default = "default_n_obs")]
    pub n_obs: usize,
    #[serde(default)]
    pub out: Option<PathBuf>,
    /// Parameter values overriding the model defaults; the starting point
    /// of optimizers and samplers.
    #[serde(default)]
    pub params: BTreeMap<String, f64>,
    #[serde(default)]
    pub replicates: Replicates,
    #[serde(default)]
    pub algorithm: AlgorithmConfig,
    #[serde(default)]
    pub perturbation: Option<PerturbationConfig>,
    #[serde(default)]
    pub proposal: Option<ProposalConfig>,
}

fn default_seed() -> u64 {
    1
}

fn default_n_obs() -> usize {
    100
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Replicates {
    #[serde(default = "default_count")]
    pub count: usize,
    /// Worker threads; all available cores when absent.
    #[serde(default)]
    pub jobs: Option<usize>,
    /// Uniform start box `[lower, upper]` per parameter.
    #[serde(default)]
    pub start_box: BTreeMap<String, [f64; 2]>,
}

fn default_count() -> usize {
    1
}

impl Default for Replicates {
    fn default() -> Self {
        Replicates {
            count: 1,
            jobs: None,
            start_box: BTreeMap::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlgorithmConfig {
    /// Iterations `M` (optimizers) or chain length (samplers).
    #[serde(default)]
    pub iterations: Option<usize>,
    #[serde(default)]
    pub particles: Option<usize>,
    /// Fixed lag `L`.
    #[serde(default)]
    pub lag: usize,
    #[serde(default)]
    pub max_fail: Option<usize>,
    /// Momentum coefficient.
    #[serde(default)]
    pub gamma: Option<f64>,
    /// AVIF averaging start.
    #[serde(default)]
    pub k_start: usize,
    #[serde(default)]
    pub telescoped: bool,
    /// AIF step scale for the standard sequences.
    #[serde(default)]
    pub lambda0: Option<f64>,
    /// Explicit AIF sequences; override `lambda0`.
    #[serde(default)]
    pub sequences: Option<AccelSequences>,
    #[serde(default)]
    pub is2_form: Is2Form,
    /// Samples discarded before ESS and posterior summaries.
    #[serde(default)]
    pub burn_in: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerturbationConfig {
    /// Walk sd per parameter (estimation scale); others are not perturbed.
    pub sigma: BTreeMap<String, f64>,
    /// Cooling rate `a`.
    #[serde(default)]
    pub cooling: Option<f64>,
    /// Alternative to `cooling`: the walk-scale fraction reached at the last
    /// iteration, `a^(M-1)`.
    #[serde(default)]
    pub cooling_final: Option<f64>,
    #[serde(default = "default_multiplier")]
    pub init_multiplier: f64,
}

fn default_multiplier() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProposalConfig {
    /// Random-walk sd per parameter (natural scale); others are fixed.
    pub scales: BTreeMap<String, f64>,
    #[serde(default)]
    pub epsilon: f64,
    #[serde(default)]
    pub score_particles: Option<usize>,
    #[serde(default)]
    pub score_walk_fraction: Option<f64>,
    #[serde(default)]
    pub score_init_multiplier: Option<f64>,
}

impl PerturbationConfig {
    /// Cooling rate, resolving `cooling_final` against `M`.
    pub fn cooling_rate(&self, iterations: usize) -> f64 {
        match (self.cooling, self.cooling_final) {
            (Some(a), _) => a,
            (None, Some(f)) if iterations > 1 => f.powf(1.0 / (iterations as f64 - 1.0)),
            _ => 0.5,
        }
    }
}

/// Command-line overrides.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub command: Option<Command>,
    pub seed: Option<u64>,
    pub reps: Option<usize>,
    pub jobs: Option<usize>,
    pub out: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        toml::from_str(s).map_err(|e| PompError::Validation(vec![format!("config parse error: {}", e.message())]))
    }

    /// Reads a config file; a relative `data` path is resolved against the
    /// file's directory.
    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| PompError::Validation(vec![format!("cannot read config {}: {e}", path.display())]))?;
        let mut cfg = Self::from_toml_str(&text)?;
        if let (Some(d), Some(dir)) = (&cfg.data, path.parent()) {
            if d.is_relative() {
                cfg.data = Some(dir.join(d));
            }
        }
        Ok(cfg)
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(c) = o.command {
            self.command = c;
        }
        if let Some(s) = o.seed {
            self.seed = s;
        }
        if let Some(r) = o.reps {
            self.replicates.count = r;
        }
        if o.jobs.is_some() {
            self.replicates.jobs = o.jobs;
        }
        if o.out.is_some() {
            self.out = o.out.clone();
        }
    }

    pub fn out_dir(&self) -> PathBuf {
        self.out
            .clone()
            .unwrap_or_else(|| PathBuf::from(format!("runs/{}_{}", self.model, self.command.name())))
    }

    /// Checks everything that can be checked without running; `n_obs` is the
    /// series length when known. Every violation is reported.
    pub fn validate(&self, registry: &Registry, n_obs: Option<usize>) -> Result<()> {
        let mut e = Vec::new();
        let entry = registry.get(&self.model);
        if entry.is_none() {
            e.push(format!("unknown model `{}` (registered: {})", self.model, registry.names().join(", ")));
        }
        let known = |name: &str| entry.is_none_or(|en| en.model.param_index(name).is_some());
        for (k, v) in &self.params {
            if !known(k) {
                e.push(format!("params: unknown parameter `{k}`"));
            }
            if !v.is_finite() {
                e.push(format!("params: `{k}` is not finite"));
            }
        }
        if self.replicates.count == 0 {
            e.push("replicates.count must be at least 1".into());
        }
        if self.replicates.jobs == Some(0) {
            e.push("replicates.jobs must be at least 1".into());
        }
        for (k, [lo, hi]) in &self.replicates.start_box {
            if !known(k) {
                e.push(format!("replicates.start_box: unknown parameter `{k}`"));
            }
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                e.push(format!("replicates.start_box: `{k}` needs finite lower < upper, got [{lo}, {hi}]"));
            }
        }
        if self.n_obs == 0 {
            e.push("n_obs must be at least 1".into());
        }
        if let Some(d) = &self.data {
            if !d.exists() {
                e.push(format!("data file {} does not exist", d.display()));
            }
        }
        let cmd = self.command;
        let alg = &self.algorithm;
        if cmd.needs_particles() && alg.particles.unwrap_or(0) == 0 {
            e.push(format!("algorithm.particles must be at least 1 for {}", cmd.name()));
        }
        if (cmd.is_optimizer() || cmd.is_sampler()) && alg.iterations.unwrap_or(0) == 0 {
            e.push(format!("algorithm.iterations must be at least 1 for {}", cmd.name()));
        }
        if let Some(n) = n_obs {
            if cmd == Command::Psmooth && alg.lag >= n {
                e.push(format!("algorithm.lag must be below the series length {n} for psmooth"));
            }
            if alg.lag > n {
                e.push(format!("algorithm.lag {} exceeds the series length {n}", alg.lag));
            }
            if cmd == Command::Avif && alg.k_start >= n {
                e.push(format!("algorithm.k_start must be below the series length {n}"));
            }
        }
        if cmd == Command::Is2 && alg.lag == 0 {
            e.push("is2 needs algorithm.lag >= 1".into());
        }
        if cmd == Command::Momentum {
            match alg.gamma {
                Some(g) if (0.0..1.0).contains(&g) => {}
                Some(g) => e.push(format!("algorithm.gamma must lie in [0, 1), got {g}")),
                None => e.push("momentum needs algorithm.gamma".into()),
            }
        }
        if cmd == Command::Aif {
            match (&alg.sequences, alg.lambda0) {
                (Some(s), _) => {
                    if let Err(PompError::Validation(v)) = s.validate(alg.iterations.unwrap_or(0)) {
                        e.extend(v.into_iter().map(|m| format!("algorithm.sequences: {m}")));
                    }
                }
                (None, Some(l)) if l > 0.0 && l.is_finite() => {}
                (None, Some(l)) => e.push(format!("algorithm.lambda0 must be positive, got {l}")),
                (None, None) => e.push("aif needs algorithm.lambda0 or algorithm.sequences".into()),
            }
        }
        if cmd.is_optimizer() {
            match &self.perturbation {
                None => e.push(format!("{} needs a [perturbation] section", cmd.name())),
                Some(p) => {
                    for (k, s) in &p.sigma {
                        if !known(k) {
                            e.push(format!("perturbation.sigma: unknown parameter `{k}`"));
                        }
                        if !(s.is_finite() && *s >= 0.0) {
                            e.push(format!("perturbation.sigma: `{k}` must be finite and >= 0"));
                        }
                    }
                    match (p.cooling, p.cooling_final) {
                        (Some(_), Some(_)) => e.push("give perturbation.cooling or cooling_final, not both".into()),
                        (None, None) => e.push("perturbation needs cooling or cooling_final".into()),
                        (Some(a), None) if !(a > 0.0 && a < 1.0) => {
                            e.push(format!("perturbation.cooling must lie in (0, 1), got {a}"))
                        }
                        (None, Some(f)) if !(f > 0.0 && f < 1.0) => {
                            e.push(format!("perturbation.cooling_final must lie in (0, 1), got {f}"))
                        }
                        (None, Some(_)) if alg.iterations.unwrap_or(0) < 2 => {
                            e.push("perturbation.cooling_final needs at least 2 iterations".into())
                        }
                        _ => {}
                    }
                    if !(p.init_multiplier.is_finite() && p.init_multiplier >= 0.0) {
                        e.push("perturbation.init_multiplier must be >= 0".into());
                    }
                }
            }
        }
        if cmd.is_sampler() {
            if let Some(en) = entry {
                if en.model.hooks.dprior(&en.defaults).is_none() {
                    e.push(format!("model `{}` has no prior; {} needs one", self.model, cmd.name()));
                }
            }
            match &self.proposal {
                None => e.push(format!("{} needs a [proposal] section", cmd.name())),
                Some(p) => {
                    for (k, s) in &p.scales {
                        if !known(k) {
                            e.push(format!("proposal.scales: unknown parameter `{k}`"));
                        }
                        if !(s.is_finite() && *s >= 0.0) {
                            e.push(format!("proposal.scales: `{k}` must be finite and >= 0"));
                        }
                    }
                    if !(p.epsilon.is_finite() && p.epsilon >= 0.0) {
                        e.push("proposal.epsilon must be >= 0".into());
                    }
                }
            }
            if let Some(m) = alg.iterations {
                if alg.burn_in + 10 > m {
                    e.push(format!("algorithm.burn_in {} leaves fewer than 10 samples of {m}", alg.burn_in));
                }
            }
        }
        if cmd == Command::Kalman {
            if let Some(en) = entry {
                if en.oracle.is_none() {
                    e.push(format!("model `{}` has no exact likelihood oracle", self.model));
                }
            }
        }
        if e.is_empty() {
            Ok(())
        } else {
            Err(PompError::Validation(e))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_minimal() {
        let c = ExperimentConfig::from_toml_str("model = \"ou2\"\ncommand = \"simulate\"\n").unwrap();
        assert_eq!(c.seed, 1);
        assert_eq!(c.replicates.count, 1);
        c.validate(&Registry::builtin(), None).unwrap();
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(ExperimentConfig::from_toml_str("model = \"ou2\"\ncommand = \"simulate\"\nfoo = 1\n").is_err());
        assert!(ExperimentConfig::from_toml_str("model = \"ou2\"\ncommand = \"fly\"\n").is_err());
    }

    #[test]
    fn every_violation_listed() {
        let text = r#"
model = "ou2"
command = "if2"
[replicates]
count = 0
start_box = { alpha_2 = [0.0, -1.0], nope = [0.0, 1.0] }
[algorithm]
iterations = 0
particles = 0
"#;
        let c = ExperimentConfig::from_toml_str(text).unwrap();
        match c.validate(&Registry::builtin(), None) {
            Err(PompError::Validation(v)) => {
                assert_eq!(v.len(), 6, "{v:#?}");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn sampler_needs_prior() {
        let text = "model = \"ou2\"\ncommand = \"pmmh\"\n[algorithm]\niterations = 100\nparticles = 10\n[proposal]\nscales = { alpha_1 = 0.1 }\n";
        let c = ExperimentConfig::from_toml_str(text).unwrap();
        let err = c.validate(&Registry::builtin(), None).unwrap_err().to_string();
        assert!(err.contains("no prior"), "{err}");
    }

    #[test]
    fn cooling_final_resolves() {
        let p = PerturbationConfig {
            sigma: BTreeMap::new(),
            cooling: None,
            cooling_final: Some(0.55),
            init_multiplier: 1.0,
        };
        let a = p.cooling_rate(20);
        assert!((a.powi(19) - 0.55).abs() < 1e-12);
    }
}
