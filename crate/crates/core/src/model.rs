//! The POMP model abstraction: user hooks, parameter metadata and observed data.

use crate::error::{PompError, Result};
use crate::rng::{RngStream, SimRng};
use serde_json::{Map, Value};
use std::collections::HashSet;
use std::fmt;
use std::io::{BufRead, Write};
use std::sync::Arc;

/// Simulator and density hooks of a partially observed Markov process.
///
/// Hooks must be pure given their inputs and generator; they are called
/// concurrently from particle loops.
pub trait PompModel: Send + Sync {
    /// Draw `x0 ~ f_{X_0}(. ; theta)` into `x0`.
    fn rinit(&self, theta: &[f64], rng: &mut SimRng, x0: &mut [f64]);

    /// Advance `x` in place from `t_start` to `t_end`.
    fn rprocess(&self, x: &mut [f64], theta: &[f64], t_start: f64, t_end: f64, rng: &mut SimRng);

    /// Log density of observation `y` given state `x` at time `t`. May return
    /// `f64::NEG_INFINITY` for an impossible observation; never NaN.
    fn dmeasure(&self, y: &[f64], x: &[f64], theta: &[f64], t: f64) -> f64;

    /// Draw an observation. Only needed for simulation.
    fn rmeasure(
        &self,
        _x: &[f64],
        _theta: &[f64],
        _t: f64,
        _rng: &mut SimRng,
        _y: &mut [f64],
    ) -> Result<()> {
        Err(PompError::Unsupported("model has no rmeasure".into()))
    }

    /// Log prior density, if the model defines one.
    fn dprior(&self, _theta: &[f64]) -> Option<f64> {
        None
    }
}

/// Map between the natural parameter scale and the scale on which
/// perturbation and optimization happen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParamTransform {
    #[default]
    Identity,
    Log,
    Logit,
}

impl ParamTransform {
    pub fn to_estimation(self, v: f64) -> f64 {
        match self {
            ParamTransform::Identity => v,
            ParamTransform::Log => v.ln(),
            ParamTransform::Logit => (v / (1.0 - v)).ln(),
        }
    }

    pub fn to_natural(self, u: f64) -> f64 {
        match self {
            ParamTransform::Identity => u,
            ParamTransform::Log => u.exp(),
            ParamTransform::Logit => 1.0 / (1.0 + (-u).exp()),
        }
    }

    /// `du/dv` of the forward map at natural value `v`.
    pub fn derivative(self, v: f64) -> f64 {
        match self {
            ParamTransform::Identity => 1.0,
            ParamTransform::Log => 1.0 / v,
            ParamTransform::Logit => 1.0 / (v * (1.0 - v)),
        }
    }
}

/// A model definition: hooks plus the metadata every algorithm needs.
#[derive(Clone)]
pub struct ModelSpec {
    pub name: String,
    pub dim_state: usize,
    pub dim_obs: usize,
    pub param_names: Vec<String>,
    /// 0-based positions of initial-value parameters.
    pub ivp_indices: Vec<usize>,
    pub transforms: Vec<ParamTransform>,
    pub t0: f64,
    pub times: Vec<f64>,
    pub hooks: Arc<dyn PompModel>,
}

impl fmt::Debug for ModelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ModelSpec")
            .field("name", &self.name)
            .field("dim_state", &self.dim_state)
            .field("dim_obs", &self.dim_obs)
            .field("param_names", &self.param_names)
            .field("ivp_indices", &self.ivp_indices)
            .field("t0", &self.t0)
            .field("n_times", &self.times.len())
            .finish()
    }
}

impl ModelSpec {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        name: impl Into<String>,
        dim_state: usize,
        dim_obs: usize,
        param_names: Vec<String>,
        ivp_indices: Vec<usize>,
        t0: f64,
        times: Vec<f64>,
        hooks: Arc<dyn PompModel>,
    ) -> Result<Self> {
        let p = param_names.len();
        let spec = ModelSpec {
            name: name.into(),
            dim_state,
            dim_obs,
            param_names,
            ivp_indices,
            transforms: vec![ParamTransform::Identity; p],
            t0,
            times,
            hooks,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn with_transforms(mut self, transforms: Vec<ParamTransform>) -> Result<Self> {
        if transforms.len() != self.param_names.len() {
            return Err(PompError::InvalidModel(format!(
                "{} transforms for {} parameters",
                transforms.len(),
                self.param_names.len()
            )));
        }
        self.transforms = transforms;
        Ok(self)
    }

    /// Replace the observation times (e.g. to match a loaded dataset).
    pub fn with_times(mut self, t0: f64, times: Vec<f64>) -> Result<Self> {
        self.t0 = t0;
        self.times = times;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim_state == 0 || self.dim_obs == 0 {
            return Err(PompError::InvalidModel("state and observation dimensions must be positive".into()));
        }
        let mut seen = HashSet::new();
        for n in &self.param_names {
            if !seen.insert(n.as_str()) {
                return Err(PompError::InvalidModel(format!("duplicate parameter name `{n}`")));
            }
        }
        let p = self.param_names.len();
        if let Some(&i) = self.ivp_indices.iter().find(|&&i| i >= p) {
            return Err(PompError::InvalidModel(format!("IVP index {i} out of range for {p} parameters")));
        }
        if self.transforms.len() != p {
            return Err(PompError::InvalidModel("transform count does not match parameter count".into()));
        }
        let mut prev = self.t0;
        for &t in &self.times {
            if !(t > prev) {
                return Err(PompError::InvalidModel(format!(
                    "times must be strictly increasing after t0 = {}; got {t} after {prev}",
                    self.t0
                )));
            }
            prev = t;
        }
        Ok(())
    }

    pub fn n_params(&self) -> usize {
        self.param_names.len()
    }

    pub fn n_times(&self) -> usize {
        self.times.len()
    }

    pub fn is_ivp(&self, i: usize) -> bool {
        self.ivp_indices.contains(&i)
    }

    pub fn param_index(&self, name: &str) -> Option<usize> {
        self.param_names.iter().position(|n| n == name)
    }

    pub fn to_estimation(&self, natural: &[f64]) -> Vec<f64> {
        natural
            .iter()
            .zip(&self.transforms)
            .map(|(&v, t)| t.to_estimation(v))
            .collect()
    }

    pub fn to_natural(&self, est: &[f64]) -> Vec<f64> {
        est.iter()
            .zip(&self.transforms)
            .map(|(&u, t)| t.to_natural(u))
            .collect()
    }

    /// Build a parameter vector from `(name, value)` pairs covering every parameter.
    pub fn params(&self, pairs: &[(&str, f64)]) -> Result<ParamVector> {
        let mut values = vec![f64::NAN; self.n_params()];
        for (name, v) in pairs {
            let i = self
                .param_index(name)
                .ok_or_else(|| PompError::InvalidArgument(format!("unknown parameter `{name}`")))?;
            values[i] = *v;
        }
        ParamVector::new(self.param_names.clone(), values)
    }
}

/// Parameter values aligned with a model's `param_names`.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector {
    names: Vec<String>,
    values: Vec<f64>,
}

impl ParamVector {
    pub fn new(names: Vec<String>, values: Vec<f64>) -> Result<Self> {
        if names.len() != values.len() {
            return Err(PompError::InvalidArgument(format!(
                "{} names but {} values",
                names.len(),
                values.len()
            )));
        }
        if let Some((n, v)) = names.iter().zip(&values).find(|(_, v)| !v.is_finite()) {
            return Err(PompError::InvalidArgument(format!("parameter `{n}` is not finite ({v})")));
        }
        Ok(ParamVector { names, values })
    }

    pub fn for_model(model: &ModelSpec, values: Vec<f64>) -> Result<Self> {
        Self::new(model.param_names.clone(), values)
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.names.iter().position(|n| n == name).map(|i| self.values[i])
    }

    pub fn set(&mut self, name: &str, value: f64) -> Result<()> {
        let i = self
            .names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| PompError::InvalidArgument(format!("unknown parameter `{name}`")))?;
        if !value.is_finite() {
            return Err(PompError::InvalidArgument(format!("parameter `{name}` is not finite")));
        }
        self.values[i] = value;
        Ok(())
    }

    pub fn to_json(&self) -> Value {
        let map: Map<String, Value> = self
            .names
            .iter()
            .zip(&self.values)
            .map(|(n, &v)| (n.clone(), Value::from(v)))
            .collect();
        Value::Object(map)
    }

    /// Parse a JSON object keyed by parameter name. Every name must be present.
    pub fn from_json(names: &[String], json: &Value) -> Result<Self> {
        let obj = json
            .as_object()
            .ok_or_else(|| PompError::InvalidArgument("parameter JSON must be an object".into()))?;
        if let Some(k) = obj.keys().find(|k| !names.contains(k)) {
            return Err(PompError::InvalidArgument(format!("unknown parameter `{k}`")));
        }
        let values = names
            .iter()
            .map(|n| {
                obj.get(n)
                    .and_then(Value::as_f64)
                    .ok_or_else(|| PompError::InvalidArgument(format!("missing or non-numeric parameter `{n}`")))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(names.to_vec(), values)
    }
}

/// Observed time series: `N` rows of `dim_obs` values.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeriesData {
    times: Vec<f64>,
    dim_obs: usize,
    obs: Vec<f64>,
}

impl TimeSeriesData {
    pub fn new(times: Vec<f64>, dim_obs: usize, obs: Vec<f64>) -> Result<Self> {
        if dim_obs == 0 {
            return Err(PompError::InvalidData("observation dimension must be positive".into()));
        }
        if obs.len() != times.len() * dim_obs {
            return Err(PompError::InvalidData(format!(
                "{} values for {} rows of width {dim_obs}",
                obs.len(),
                times.len()
            )));
        }
        if let Some(k) = obs.iter().position(|v| !v.is_finite()) {
            return Err(PompError::InvalidData(format!(
                "non-finite observation at row {}, column {} (missing data is not supported)",
                k / dim_obs + 1,
                k % dim_obs + 1
            )));
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(PompError::InvalidData("times must be strictly increasing".into()));
        }
        Ok(TimeSeriesData { times, dim_obs, obs })
    }

    pub fn from_rows(times: Vec<f64>, rows: &[Vec<f64>]) -> Result<Self> {
        let d = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != d) {
            return Err(PompError::InvalidData("ragged observation rows".into()));
        }
        Self::new(times, d, rows.concat())
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn dim_obs(&self) -> usize {
        self.dim_obs
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    /// Observation at 0-based row `n`.
    pub fn row(&self, n: usize) -> &[f64] {
        &self.obs[n * self.dim_obs..(n + 1) * self.dim_obs]
    }

    pub fn values(&self) -> &[f64] {
        &self.obs
    }

    /// Check rows and times agree with the model.
    pub fn check_against(&self, model: &ModelSpec) -> Result<()> {
        if self.dim_obs != model.dim_obs {
            return Err(PompError::InvalidData(format!(
                "data has {} columns, model expects {}",
                self.dim_obs, model.dim_obs
            )));
        }
        if self.times != model.times {
            return Err(PompError::InvalidData(format!(
                "data times ({} rows) do not match model times ({} rows)",
                self.len(),
                model.n_times()
            )));
        }
        Ok(())
    }

    /// Write CSV with header `time,y1,..,yd`. Values use the shortest representation that round-trips.
    /// Lines in `comments` are written first, each prefixed with `# `.
    pub fn write_csv<W: Write>(&self, mut w: W, comments: &[String]) -> Result<()> {
        for c in comments {
            writeln!(w, "# {c}")?;
        }
        let header: Vec<String> = std::iter::once("time".to_string())
            .chain((1..=self.dim_obs).map(|k| format!("y{k}")))
            .collect();
        writeln!(w, "{}", header.join(","))?;
        for n in 0..self.len() {
            let mut line = fmt_f64(self.times[n]);
            for v in self.row(n) {
                line.push(',');
                line.push_str(&fmt_f64(*v));
            }
            writeln!(w, "{line}")?;
        }
        Ok(())
    }

    /// Read CSV written by [`TimeSeriesData::write_csv`]. `#` lines are skipped.
    pub fn read_csv<R: BufRead>(r: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .comment(Some(b'#'))
            .trim(csv::Trim::All)
            .from_reader(r);
        let headers = rdr.headers()?.clone();
        if headers.get(0) != Some("time") || headers.len() < 2 {
            return Err(PompError::InvalidData("CSV header must be `time,y1,...`".into()));
        }
        for (k, h) in headers.iter().skip(1).enumerate() {
            if h != format!("y{}", k + 1) {
                return Err(PompError::InvalidData(format!("unexpected CSV column `{h}`")));
            }
        }
        let d = headers.len() - 1;
        let mut times = Vec::new();
        let mut obs = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            let parse = |s: &str| {
                s.parse::<f64>()
                    .map_err(|_| PompError::InvalidData(format!("cannot parse `{s}` as a number")))
            };
            times.push(parse(&rec[0])?);
            for k in 1..=d {
                obs.push(parse(rec.get(k).unwrap_or(""))?);
            }
        }
        Self::new(times, d, obs)
    }

    pub fn read_csv_path(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let f = std::fs::File::open(path)?;
        Self::read_csv(std::io::BufReader::new(f))
    }
}

/// Format with 17 significant digits (IEEE-754 round trip).
pub fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

/// Latent trajectory returned by [`simulate`]: `N + 1` rows (time 0 first).
#[derive(Debug, Clone)]
pub struct StateTrajectory {
    pub dim_state: usize,
    pub states: Vec<f64>,
}

impl StateTrajectory {
    pub fn row(&self, n: usize) -> &[f64] {
        &self.states[n * self.dim_state..(n + 1) * self.dim_state]
    }
}

/// Simulate a latent trajectory and observations at the model's times.
pub fn simulate(
    model: &ModelSpec,
    theta: &ParamVector,
    rng: &RngStream,
) -> Result<(TimeSeriesData, StateTrajectory)> {
    if theta.len() != model.n_params() {
        return Err(PompError::InvalidArgument("parameter vector length mismatch".into()));
    }
    let th = theta.values();
    let dx = model.dim_state;
    let n = model.n_times();
    let mut states = vec![0.0; (n + 1) * dx];
    let mut obs = vec![0.0; n * model.dim_obs];
    model
        .hooks
        .rinit(th, &mut rng.substream("init").generator(), &mut states[..dx]);
    let mut t_prev = model.t0;
    for k in 0..n {
        let (done, rest) = states.split_at_mut((k + 1) * dx);
        let x = &mut rest[..dx];
        x.copy_from_slice(&done[k * dx..]);
        let step = rng.substream_index(k as u64 + 1);
        let t = model.times[k];
        model
            .hooks
            .rprocess(x, th, t_prev, t, &mut step.substream("process").generator());
        model.hooks.rmeasure(
            x,
            th,
            t,
            &mut step.substream("measure").generator(),
            &mut obs[k * model.dim_obs..(k + 1) * model.dim_obs],
        )?;
        t_prev = t;
    }
    let data = TimeSeriesData::new(model.times.clone(), model.dim_obs, obs)?;
    Ok((data, StateTrajectory { dim_state: dx, states }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicUsize, Ordering};

    struct Counting {
        inits: AtomicUsize,
        steps: AtomicUsize,
    }

    impl PompModel for Counting {
        fn rinit(&self, _: &[f64], _: &mut SimRng, x0: &mut [f64]) {
            self.inits.fetch_add(1, Ordering::SeqCst);
            x0[0] = 0.0;
        }
        fn rprocess(&self, x: &mut [f64], _: &[f64], _: f64, _: f64, _: &mut SimRng) {
            self.steps.fetch_add(1, Ordering::SeqCst);
            x[0] += 1.0;
        }
        fn dmeasure(&self, _: &[f64], _: &[f64], _: &[f64], _: f64) -> f64 {
            0.0
        }
        fn rmeasure(&self, x: &[f64], _: &[f64], _: f64, _: &mut SimRng, y: &mut [f64]) -> Result<()> {
            y[0] = x[0];
            Ok(())
        }
    }

    struct NoMeasure;
    impl PompModel for NoMeasure {
        fn rinit(&self, _: &[f64], _: &mut SimRng, x0: &mut [f64]) {
            x0[0] = 0.0;
        }
        fn rprocess(&self, _: &mut [f64], _: &[f64], _: f64, _: f64, _: &mut SimRng) {}
        fn dmeasure(&self, _: &[f64], _: &[f64], _: &[f64], _: f64) -> f64 {
            0.0
        }
    }

    fn times(n: usize) -> Vec<f64> {
        (1..=n).map(|k| k as f64).collect()
    }

    #[test]
    fn simulate_calls_hooks_expected_number_of_times() {
        let hooks = Arc::new(Counting {
            inits: AtomicUsize::new(0),
            steps: AtomicUsize::new(0),
        });
        let m = ModelSpec::new("c", 1, 1, vec!["a".into()], vec![], 0.0, times(17), hooks.clone()).unwrap();
        let th = m.params(&[("a", 1.0)]).unwrap();
        let (data, traj) = simulate(&m, &th, &RngStream::new(1)).unwrap();
        assert_eq!(hooks.inits.load(Ordering::SeqCst), 1);
        assert_eq!(hooks.steps.load(Ordering::SeqCst), 17);
        assert_eq!(data.len(), 17);
        assert_eq!(data.row(16), &[17.0]);
        assert_eq!(traj.row(0), &[0.0]);
    }

    #[test]
    fn simulate_without_rmeasure_is_unsupported() {
        let m = ModelSpec::new("n", 1, 1, vec!["a".into()], vec![], 0.0, times(3), Arc::new(NoMeasure)).unwrap();
        let th = m.params(&[("a", 1.0)]).unwrap();
        assert!(matches!(
            simulate(&m, &th, &RngStream::new(1)),
            Err(PompError::Unsupported(_))
        ));
    }

    #[test]
    fn model_validation() {
        let h: Arc<dyn PompModel> = Arc::new(NoMeasure);
        assert!(ModelSpec::new("x", 1, 1, vec!["a".into(), "a".into()], vec![], 0.0, times(2), h.clone()).is_err());
        assert!(ModelSpec::new("x", 1, 1, vec!["a".into()], vec![1], 0.0, times(2), h.clone()).is_err());
        assert!(ModelSpec::new("x", 1, 1, vec!["a".into()], vec![], 1.0, times(2), h.clone()).is_err());
        assert!(ModelSpec::new("x", 1, 1, vec!["a".into()], vec![], 0.0, vec![1.0, 1.0], h).is_err());
    }

    #[test]
    fn data_rejects_non_finite() {
        assert!(TimeSeriesData::new(vec![1.0, 2.0], 1, vec![1.0, f64::NAN]).is_err());
        assert!(TimeSeriesData::new(vec![1.0, 2.0], 1, vec![1.0]).is_err());
    }

    #[test]
    fn param_json_roundtrip_and_errors() {
        let names = vec!["a".to_string(), "b".to_string()];
        let p = ParamVector::new(names.clone(), vec![0.1, -2.5]).unwrap();
        let back = ParamVector::from_json(&names, &p.to_json()).unwrap();
        assert_eq!(p, back);
        assert!(ParamVector::from_json(&names, &serde_json::json!({"a": 1.0})).is_err());
        assert!(ParamVector::from_json(&names, &serde_json::json!({"a": 1.0, "b": 2.0, "c": 0.0})).is_err());
        assert!(ParamVector::new(names, vec![f64::INFINITY, 0.0]).is_err());
    }

    #[test]
    fn transforms_invert() {
        for (t, v) in [(ParamTransform::Log, 0.3), (ParamTransform::Logit, 0.8), (ParamTransform::Identity, -4.0)] {
            assert!((t.to_natural(t.to_estimation(v)) - v).abs() < 1e-14);
        }
    }
}
