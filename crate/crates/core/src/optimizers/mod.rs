//! Iterated filtering and smoothing optimizers.
//!
//! Every optimizer works on the model's estimation scale and returns an
//! [`OptimizerTrace`] on the natural scale. Iteration `m` draws from the
//! substream `<root>/<m>`.

mod aif;
mod avif;
mod if1;
mod if2;
mod is2;
mod momentum;
pub mod score;

pub use crate::perturb::{cooling, cooling_rate_between, PerturbationSpec};
pub use aif::{aif, AccelSequences};
pub use avif::{avif, AvifOptions};
pub use if1::if1;
pub use if2::if2;
pub use is2::{is2, Is2Form, Is2Options};
pub use momentum::momentum_mif;
pub use score::{score_at, score_estimate, ScoreMode};

use crate::engine::{self, FilterOptions, Params, PassOutput, Perturbation, SwarmInit, Tracking, Walk};
use crate::error::{PompError, Result};
use crate::model::{fmt_f64, ModelSpec, ParamVector, TimeSeriesData};
use crate::rng::RngStream;
use crate::table::RowMatrix;
use serde::{Deserialize, Serialize};
use std::io::Write;

/// Settings shared by all iterated algorithms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IteratedOptions {
    /// Number of iterations `M`.
    pub iterations: usize,
    /// Particles per pass `J`.
    pub particles: usize,
    pub pert: PerturbationSpec,
    #[serde(skip)]
    pub filter: FilterOptions,
}

impl IteratedOptions {
    pub fn new(iterations: usize, particles: usize, pert: PerturbationSpec) -> Self {
        IteratedOptions {
            iterations,
            particles,
            pert,
            filter: FilterOptions::default(),
        }
    }

    fn validate(&self, model: &ModelSpec, theta0: &ParamVector, data: &TimeSeriesData) -> Result<()> {
        let mut errs = Vec::new();
        if self.iterations == 0 {
            errs.push("iterations M must be at least 1".to_string());
        }
        if self.particles == 0 {
            errs.push("particles J must be at least 1".to_string());
        }
        if theta0.len() != model.n_params() {
            errs.push("starting parameter vector has the wrong length".to_string());
        }
        if self.pert.lag > data.len() {
            errs.push(format!("lag {} exceeds series length {}", self.pert.lag, data.len()));
        }
        if let Err(PompError::Validation(v)) = self.pert.validate(model.n_params()) {
            errs.extend(v);
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(PompError::Validation(errs))
        }
    }
}

/// Per-iteration record of an optimizer run. Row `m - 1` belongs to iteration `m`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OptimizerTrace {
    pub algorithm: String,
    pub param_names: Vec<String>,
    /// Starting point (natural scale).
    pub theta0: Vec<f64>,
    /// `M x p` iterates (natural scale). The last row is the estimate.
    pub theta: RowMatrix,
    /// Log-likelihood estimate from each iteration's perturbed pass.
    pub loglik: Vec<f64>,
    /// `M x p` score estimates (estimation scale), when computed.
    pub score: Option<RowMatrix>,
    /// Information matrices (IS2 only), over the active coordinates.
    pub information: Vec<RowMatrix>,
    /// Euclidean norm of the estimation-scale step.
    pub step_norm: Vec<f64>,
    /// Set when the IS2 guard replaced the Newton step.
    pub fallback: Vec<bool>,
    pub n_failures: Vec<usize>,
    /// Auxiliary sequences, e.g. the AIF midpoints.
    pub aux: Vec<(String, RowMatrix)>,
}

impl OptimizerTrace {
    fn new(algorithm: &str, model: &ModelSpec, theta0: &ParamVector) -> Self {
        OptimizerTrace {
            algorithm: algorithm.to_string(),
            param_names: model.param_names.clone(),
            theta0: theta0.values().to_vec(),
            theta: RowMatrix::empty(),
            loglik: Vec::new(),
            score: None,
            information: Vec::new(),
            step_norm: Vec::new(),
            fallback: Vec::new(),
            n_failures: Vec::new(),
            aux: Vec::new(),
        }
    }

    pub fn iterations(&self) -> usize {
        self.theta.rows()
    }

    /// Final iterate `theta_M`.
    pub fn estimate(&self) -> ParamVector {
        let v = if self.theta.is_empty() {
            self.theta0.clone()
        } else {
            self.theta.row(self.theta.rows() - 1).to_vec()
        };
        ParamVector::new(self.param_names.clone(), v).expect("finite iterate")
    }

    /// Average of `theta_m` over `m = m_start..=M`, taken on the estimation scale.
    pub fn iterate_average(&self, model: &ModelSpec, m_start: usize) -> Result<ParamVector> {
        let m_total = self.theta.rows();
        if m_start == 0 || m_start > m_total {
            return Err(PompError::InvalidArgument(format!(
                "averaging start {m_start} outside 1..={m_total}"
            )));
        }
        let p = self.param_names.len();
        let mut acc = vec![0.0; p];
        for m in m_start..=m_total {
            for (a, v) in acc.iter_mut().zip(model.to_estimation(self.theta.row(m - 1))) {
                *a += v;
            }
        }
        let k = (m_total + 1 - m_start) as f64;
        let est: Vec<f64> = acc.iter().map(|a| a / k).collect();
        ParamVector::new(self.param_names.clone(), model.to_natural(&est))
    }

    /// CSV `m,loglik,theta_1..p,step_norm,fallback_flag`.
    pub fn write_csv<W: Write>(&self, mut w: W, comments: &[String]) -> Result<()> {
        for c in comments {
            writeln!(w, "# {c}")?;
        }
        let p = self.param_names.len();
        let mut header = vec!["m".to_string(), "loglik".to_string()];
        header.extend((1..=p).map(|i| format!("theta_{i}")));
        header.push("step_norm".into());
        header.push("fallback_flag".into());
        writeln!(w, "{}", header.join(","))?;
        for m in 0..self.theta.rows() {
            let mut line = format!("{},{}", m + 1, fmt_f64(self.loglik[m]));
            for v in self.theta.row(m) {
                line.push(',');
                line.push_str(&fmt_f64(*v));
            }
            line.push_str(&format!(",{},{}", fmt_f64(self.step_norm[m]), u8::from(self.fallback[m])));
            writeln!(w, "{line}")?;
        }
        Ok(())
    }

    fn push(&mut self, it: &Iterate, prev_est: &[f64], out: &PassOutput, fallback: bool) {
        self.theta.push_row(&it.nat);
        self.loglik.push(out.loglik);
        self.step_norm.push(
            it.est
                .iter()
                .zip(prev_est)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt(),
        );
        self.fallback.push(fallback);
        self.n_failures.push(out.n_failures);
    }

    fn push_score(&mut self, s: &[f64]) {
        self.score.get_or_insert_with(RowMatrix::empty).push_row(s);
    }
}

/// The current iterate on both scales. Coordinates are only re-transformed
/// when they change, so untouched coordinates keep their exact starting value.
#[derive(Debug, Clone)]
pub(crate) struct Iterate {
    pub est: Vec<f64>,
    pub nat: Vec<f64>,
    transforms: Vec<crate::model::ParamTransform>,
}

impl Iterate {
    pub fn new(model: &ModelSpec, theta0: &ParamVector) -> Result<Self> {
        let nat = theta0.values().to_vec();
        let est = model.to_estimation(&nat);
        if est.iter().any(|v| !v.is_finite()) {
            return Err(PompError::InvalidArgument(
                "starting parameters are outside the transform's domain".into(),
            ));
        }
        Ok(Iterate {
            est,
            nat,
            transforms: model.transforms.clone(),
        })
    }

    pub fn set(&mut self, i: usize, v: f64) {
        if v != self.est[i] {
            self.est[i] = v;
            self.nat[i] = self.transforms[i].to_natural(v);
        }
    }

    pub fn check_finite(&self, m: usize) -> Result<()> {
        if self.est.iter().chain(&self.nat).all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(PompError::Numerical(format!("iterate became non-finite at iteration {m}")))
        }
    }
}

pub(crate) fn perturbation(model: &ModelSpec, pert: &PerturbationSpec, init: SwarmInit, walk: Walk) -> Perturbation {
    Perturbation {
        init,
        walk,
        transforms: model.transforms.clone(),
        ivp: pert.ivp_mask(model.n_params()),
    }
}

pub(crate) fn run(
    model: &ModelSpec,
    data: &TimeSeriesData,
    opts: &IteratedOptions,
    pert: Perturbation,
    track: Tracking,
    rng: &RngStream,
) -> Result<PassOutput> {
    engine::run_pass(model, data, opts.particles, &Params::Perturbed(pert), &track, &opts.filter, rng)
}

/// Random-walk pass centered at `center` (estimation scale) for iteration `m`.
pub(crate) fn random_walk_pass(
    model: &ModelSpec,
    data: &TimeSeriesData,
    opts: &IteratedOptions,
    center: &[f64],
    m: usize,
    track: Tracking,
    rng: &RngStream,
) -> Result<PassOutput> {
    let pert = &opts.pert;
    let p = perturbation(
        model,
        pert,
        SwarmInit::Draw {
            center: center.to_vec(),
            sd: pert.init_sd(m),
        },
        Walk::Random { sd: pert.walk_sd(m) },
    );
    run(model, data, opts, p, track, &rng.substream_index(m as u64))
}

/// IVP coordinates with a positive scale move to the time-`L` swarm mean.
pub(crate) fn update_ivps(it: &mut Iterate, pert: &PerturbationSpec, out: &PassOutput) {
    for &i in &pert.ivp {
        if pert.sigma[i] > 0.0 && pert.init_multiplier > 0.0 {
            it.set(i, out.lag_swarm_mean[i]);
        }
    }
}

/// `V_1 sum_n V_n^{-1} (theta_bar_n - theta_bar_{n-1})` for each active
/// coordinate, with `theta_bar_0 = center`. Inactive coordinates get 0.
pub(crate) fn if1_increment(out: &PassOutput, center: &[f64], active: &[usize]) -> Vec<f64> {
    let p = out.n_params;
    let mut delta = vec![0.0; p];
    for &i in active {
        let v1 = out.pred_variances[i];
        let mut prev = center[i];
        let mut acc = 0.0;
        for n in 0..out.n_steps {
            let cur = out.filter_means[n * p + i];
            acc += (cur - prev) / out.pred_variances[n * p + i];
            prev = cur;
        }
        delta[i] = v1 * acc;
    }
    delta
}

pub(crate) fn tracking(lag: usize) -> Tracking {
    Tracking {
        lag,
        ..Default::default()
    }
}

#[cfg(test)]
pub(crate) mod testing {
    use crate::model::{ModelSpec, ParamTransform, PompModel, TimeSeriesData};
    use crate::rng::{RngStream, SimRng};
    use rand_distr::{Distribution, StandardNormal};
    use std::f64::consts::PI;
    use std::sync::Arc;

    /// `x_n = theta + e_n`, `y_n = x_n + v_n` with unit variances: i.i.d.
    /// `y ~ N(theta, 2)`, so the MLE is the sample mean.
    pub struct IidMean;
    impl PompModel for IidMean {
        fn rinit(&self, _: &[f64], _: &mut SimRng, x0: &mut [f64]) {
            x0[0] = 0.0;
        }
        fn rprocess(&self, x: &mut [f64], th: &[f64], _: f64, _: f64, rng: &mut SimRng) {
            let z: f64 = StandardNormal.sample(rng);
            x[0] = th[0] + z;
        }
        fn dmeasure(&self, y: &[f64], x: &[f64], _: &[f64], _: f64) -> f64 {
            -0.5 * (2.0 * PI).ln() - 0.5 * (y[0] - x[0]).powi(2)
        }
    }

    /// The parameter does not enter the model.
    pub struct Flat;
    impl PompModel for Flat {
        fn rinit(&self, _: &[f64], _: &mut SimRng, x0: &mut [f64]) {
            x0[0] = 0.0;
        }
        fn rprocess(&self, x: &mut [f64], _: &[f64], _: f64, _: f64, rng: &mut SimRng) {
            let z: f64 = StandardNormal.sample(rng);
            x[0] = z;
        }
        fn dmeasure(&self, y: &[f64], x: &[f64], _: &[f64], _: f64) -> f64 {
            -0.5 * (y[0] - x[0]).powi(2)
        }
    }

    pub fn setup(h: Arc<dyn PompModel>, n: usize, seed: u64) -> (ModelSpec, TimeSeriesData) {
        let times: Vec<f64> = (1..=n).map(|k| k as f64).collect();
        let m = ModelSpec::new("t", 1, 1, vec!["theta".into()], vec![], 0.0, times.clone(), h)
            .unwrap()
            .with_transforms(vec![ParamTransform::Identity])
            .unwrap();
        let mut g = RngStream::new(seed).generator();
        let ys: Vec<f64> = (0..n)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut g);
                1.0 + 2f64.sqrt() * z
            })
            .collect();
        (m, TimeSeriesData::new(times, 1, ys).unwrap())
    }
}
