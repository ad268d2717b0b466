//! Shared particle loop behind the filter, the fixed-lag smoother and every
//! iterated algorithm.
//!
//! One pass propagates `J` particles through the data, optionally carrying a
//! per-particle parameter vector that is perturbed each step, and optionally
//! tracing ancestry `L` generations back to form fixed-lag smoothed moments.
//!
//! Random stream layout for step `n` (1-based): `<root>/<n>/perturb` lane `j`,
//! `<root>/<n>/propagate` lane `j`, `<root>/<n>/resample`. Time 0 uses
//! `<root>/0/perturb` and `<root>/0/init`. Draws are therefore independent of
//! how the particle loop is split across threads.

use crate::error::{PompError, Result};
use crate::model::{ModelSpec, ParamTransform, TimeSeriesData};
use crate::resample::{normalize_log_weights_into, Resampler};
use crate::rng::{RngStream, SimRng};
use crate::smoother::AncestryBuffer;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

/// Conditional log-likelihood recorded for a step on which every particle had
/// zero weight.
pub const FAILURE_LOGLIK: f64 = -690.775_527_898_213_7; // ln(1e-300)

/// Minimum particles per rayon task.
const MIN_CHUNK: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FilterOptions {
    pub resampler: Resampler,
    /// Maximum number of zero-weight steps tolerated; `None` is unlimited.
    pub max_fail: Option<usize>,
}

impl Default for FilterOptions {
    fn default() -> Self {
        FilterOptions {
            resampler: Resampler::Systematic,
            max_fail: None,
        }
    }
}

/// How the time-0 parameter swarm is formed.
#[derive(Debug, Clone)]
pub(crate) enum SwarmInit {
    /// `[Theta_0]_i ~ N(center_i, sd_i^2)` on the estimation scale.
    Draw { center: Vec<f64>, sd: Vec<f64> },
    /// A `J x p` swarm carried over from a previous pass (estimation scale),
    /// jittered by `sd` at time 0.
    Given { swarm: Vec<f64>, sd: Vec<f64> },
}

/// Per-step perturbation of non-IVP coordinates.
#[derive(Debug, Clone)]
pub(crate) enum Walk {
    /// `Theta^P_n = Theta^F_{n-1} + sd * z`.
    Random { sd: Vec<f64> },
    /// `Theta^P_n = center + sd * z`, fresh each step.
    WhiteNoise { center: Vec<f64>, sd: Vec<f64> },
}

impl Walk {
    fn sd(&self) -> &[f64] {
        match self {
            Walk::Random { sd } | Walk::WhiteNoise { sd, .. } => sd,
        }
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Perturbation {
    pub init: SwarmInit,
    pub walk: Walk,
    pub transforms: Vec<ParamTransform>,
    /// `true` for coordinates perturbed only at time 0.
    pub ivp: Vec<bool>,
}

#[derive(Debug, Clone)]
pub(crate) enum Params<'a> {
    /// Natural-scale parameters shared by all particles.
    Fixed(&'a [f64]),
    Perturbed(Perturbation),
}

#[derive(Debug, Clone, Default)]
pub(crate) struct Tracking {
    /// Fixed lag `L` for smoothing and IVP estimation.
    pub lag: usize,
    pub smooth_states: bool,
    pub smooth_params: bool,
    pub param_cov: bool,
    pub keep_final_swarm: bool,
    /// Keep the traced lag-`L` state samples (N x J x d_x).
    pub keep_state_samples: bool,
}

#[derive(Debug, Clone, Default)]
pub(crate) struct PassOutput {
    pub n_steps: usize,
    pub n_params: usize,
    pub dim_state: usize,
    pub loglik: f64,
    pub cond_loglik: Vec<f64>,
    pub n_failures: usize,
    /// `N x d_x` weighted means of the prediction particles.
    pub filter_state_means: Vec<f64>,
    /// `N x p` filter means (perturbed passes only).
    pub filter_means: Vec<f64>,
    /// `N x p`; row `n-1` holds the prediction variance for time `n`.
    pub pred_variances: Vec<f64>,
    /// `(N+1) x d_x`, rows for times `0..=N`.
    pub smoothed_state_means: Vec<f64>,
    pub smoothed_state_vars: Vec<f64>,
    /// `(N+1) x p`, rows for times `0..=N`.
    pub smoothed_means: Vec<f64>,
    /// `(N+1) x p x p`.
    pub smoothed_covs: Vec<f64>,
    /// Unweighted mean of the filtered swarm at time `L`.
    pub lag_swarm_mean: Vec<f64>,
    /// `J x p` filtered swarm at time `N`.
    pub final_swarm: Vec<f64>,
    /// `N x J x d_x` when requested.
    pub state_samples: Vec<f64>,
    /// Empirical variance of the time-0 swarm (perturbed passes only).
    pub initial_swarm_var: Vec<f64>,
}

/// Ring of filtered particle values and resampling indices for lineage tracing.
struct History {
    depth: usize,
    dx: usize,
    p: usize,
    states: Vec<Vec<f64>>,
    params: Vec<Vec<f64>>,
    parents: AncestryBuffer,
}

impl History {
    fn new(depth: usize, j: usize, dx: usize, p: usize, with_states: bool, with_params: bool) -> Self {
        History {
            depth,
            dx,
            p,
            states: if with_states { vec![Vec::new(); depth] } else { Vec::new() },
            params: if with_params { vec![Vec::new(); depth] } else { Vec::new() },
            parents: AncestryBuffer::new(depth.saturating_sub(1), j),
        }
    }

    fn slot(&self, t: usize) -> usize {
        t % self.depth
    }

    fn push(&mut self, t: usize, states: &[f64], params: Option<&[f64]>, parents: Option<&[usize]>) {
        let s = self.slot(t);
        if !self.states.is_empty() {
            self.states[s].clear();
            self.states[s].extend_from_slice(states);
        }
        if let (false, Some(pv)) = (self.params.is_empty(), params) {
            self.params[s].clear();
            self.params[s].extend_from_slice(pv);
        }
        if let Some(k) = parents {
            self.parents.push_slice(k);
        }
    }

    /// Map prediction-particle indices at time `n` to filtered-particle
    /// indices at time `n - lag` (`lag >= 1`).
    fn trace(&self, n: usize, lag: usize, out: &mut [usize]) {
        debug_assert!(lag >= 1 && lag <= self.depth && n >= lag);
        // Prediction particle k at n descends from filtered particle k at n - 1.
        self.parents.trace_all(n - 1, lag - 1, out);
    }

    fn state(&self, t: usize, i: usize) -> &[f64] {
        &self.states[self.slot(t)][i * self.dx..(i + 1) * self.dx]
    }

    fn param(&self, t: usize, i: usize) -> &[f64] {
        &self.params[self.slot(t)][i * self.p..(i + 1) * self.p]
    }
}

fn accumulate_mean(out: &mut [f64], w: f64, v: &[f64]) {
    for (o, x) in out.iter_mut().zip(v) {
        *o += w * x;
    }
}

/// One particle pass over the data.
pub(crate) fn run_pass(
    model: &ModelSpec,
    data: &TimeSeriesData,
    j: usize,
    params: &Params<'_>,
    track: &Tracking,
    opts: &FilterOptions,
    rng: &RngStream,
) -> Result<PassOutput> {
    if j == 0 {
        return Err(PompError::InvalidArgument("number of particles J must be at least 1".into()));
    }
    data.check_against(model)?;
    let n_steps = data.len();
    let dx = model.dim_state;
    let p = model.n_params();
    let lag = track.lag;
    if lag > n_steps {
        return Err(PompError::InvalidArgument(format!("lag {lag} exceeds series length {n_steps}")));
    }
    let hooks = model.hooks.as_ref();

    if let Params::Fixed(th) = params {
        if th.len() != p {
            return Err(PompError::InvalidArgument("parameter vector length mismatch".into()));
        }
    }
    let pert = match params {
        Params::Perturbed(pt) => {
            check_perturbation(pt, p, j)?;
            Some(pt)
        }
        Params::Fixed(_) => None,
    };
    let smooth_params = track.smooth_params && pert.is_some();

    let mut out = PassOutput {
        n_steps,
        n_params: p,
        dim_state: dx,
        cond_loglik: vec![0.0; n_steps],
        filter_state_means: vec![0.0; n_steps * dx],
        ..Default::default()
    };
    if pert.is_some() {
        out.filter_means = vec![0.0; n_steps * p];
        out.pred_variances = vec![0.0; n_steps * p];
    }
    if track.smooth_states {
        out.smoothed_state_means = vec![0.0; (n_steps + 1) * dx];
        out.smoothed_state_vars = vec![0.0; (n_steps + 1) * dx];
    }
    if smooth_params {
        out.smoothed_means = vec![0.0; (n_steps + 1) * p];
        if track.param_cov {
            out.smoothed_covs = vec![0.0; (n_steps + 1) * p * p];
        }
    }
    if track.keep_state_samples {
        out.state_samples = vec![0.0; n_steps * j * dx];
    }

    // Time 0: parameter swarm and initial states.
    let root0 = rng.substream_index(0);
    let mut theta_f: Vec<f64> = Vec::new();
    if let Some(pt) = pert {
        let (mut sw, sd) = match &pt.init {
            SwarmInit::Given { swarm, sd } => (swarm.clone(), sd),
            SwarmInit::Draw { center, sd } => (center.repeat(j), sd),
        };
        let stream = root0.substream("perturb");
        sw.par_chunks_mut(p).with_min_len(MIN_CHUNK).enumerate().for_each(|(k, th)| {
            let mut g = stream.lane(k as u64);
            for i in 0..p {
                if sd[i] > 0.0 {
                    let z: f64 = StandardNormal.sample(&mut g);
                    th[i] += sd[i] * z;
                }
            }
        });
        theta_f = sw;
        out.initial_swarm_var = column_variance(&theta_f, p);
    }
    let mut x_f = vec![0.0; j * dx];
    {
        let stream = root0.substream("init");
        let transforms = pert.map(|pt| pt.transforms.as_slice());
        x_f.par_chunks_mut(dx)
            .with_min_len(MIN_CHUNK)
            .enumerate()
            .for_each_init(
                || vec![0.0; p],
                |nat, (k, x0)| {
                    let mut g = stream.lane(k as u64);
                    let th = particle_theta(params, transforms, &theta_f, k, p, nat);
                    hooks.rinit(th, &mut g, x0);
                },
            );
    }

    let needs_history = lag >= 1 && (track.smooth_states || smooth_params || track.keep_state_samples);
    let mut hist = History::new(
        lag.max(1),
        j,
        dx,
        p,
        track.smooth_states || track.keep_state_samples,
        smooth_params,
    );
    if needs_history {
        hist.push(0, &x_f, pert.map(|_| theta_f.as_slice()), None);
    }

    if lag == 0 {
        if pert.is_some() {
            out.lag_swarm_mean = column_mean(&theta_f, p);
        }
        if smooth_params {
            let m = column_mean(&theta_f, p);
            out.smoothed_means[..p].copy_from_slice(&m);
            if track.param_cov {
                let uw = vec![1.0 / j as f64; j];
                weighted_cov_into(&theta_f, p, &uw, &m, &mut out.smoothed_covs[..p * p], |k| k);
            }
        }
        if track.smooth_states {
            let m = column_mean(&x_f, dx);
            let v = column_variance(&x_f, dx);
            out.smoothed_state_means[..dx].copy_from_slice(&m);
            out.smoothed_state_vars[..dx].copy_from_slice(&v);
        }
    }

    let mut x_p = vec![0.0; j * dx];
    let mut theta_p = if pert.is_some() { vec![0.0; j * p] } else { Vec::new() };
    let mut logw = vec![0.0; j];
    let mut w = vec![0.0; j];
    let mut traced = vec![0usize; j];
    let mut t_prev = model.t0;

    for n in 1..=n_steps {
        let step = rng.substream_index(n as u64);
        let t = data.times()[n - 1];
        let y = data.row(n - 1);

        // Perturb parameters.
        if let Some(pt) = pert {
            let stream = step.substream("perturb");
            let sd = pt.walk.sd();
            theta_p
                .par_chunks_mut(p)
                .with_min_len(MIN_CHUNK)
                .enumerate()
                .for_each(|(k, th)| {
                    let prev = &theta_f[k * p..(k + 1) * p];
                    let mut g = stream.lane(k as u64);
                    match &pt.walk {
                        Walk::Random { .. } => th.copy_from_slice(prev),
                        Walk::WhiteNoise { center, .. } => {
                            for i in 0..p {
                                th[i] = if pt.ivp[i] { prev[i] } else { center[i] };
                            }
                        }
                    }
                    for i in 0..p {
                        if !pt.ivp[i] && sd[i] > 0.0 {
                            let z: f64 = StandardNormal.sample(&mut g);
                            th[i] += sd[i] * z;
                        }
                    }
                });
        }

        // Propagate and weight.
        {
            let stream = step.substream("propagate");
            let transforms = pert.map(|pt| pt.transforms.as_slice());
            let theta_ref = &theta_p;
            x_p.copy_from_slice(&x_f);
            x_p.par_chunks_mut(dx)
                .zip(logw.par_iter_mut())
                .with_min_len(MIN_CHUNK)
                .enumerate()
                .try_for_each_init(
                    || vec![0.0; p],
                    |nat, (k, (x, lw))| -> Result<()> {
                        let mut g: SimRng = stream.lane(k as u64);
                        let th = particle_theta(params, transforms, theta_ref, k, p, nat);
                        hooks.rprocess(x, th, t_prev, t, &mut g);
                        let d = hooks.dmeasure(y, x, th, t);
                        if d.is_nan() || d == f64::INFINITY {
                            return Err(PompError::ModelContract(format!(
                                "dmeasure returned {d} at time index {n}, particle {k}"
                            )));
                        }
                        *lw = d;
                        Ok(())
                    },
                )?;
        }

        // Normalize.
        match normalize_log_weights_into(&logw, &mut w) {
            Ok(lm) => out.cond_loglik[n - 1] = lm,
            Err(zero) => {
                out.n_failures += 1;
                if let Some(maxf) = opts.max_fail {
                    if out.n_failures > maxf {
                        log::debug!("{}", zero.at(n));
                        return Err(PompError::FilteringLimitExceeded {
                            failures: out.n_failures,
                            max_fail: maxf,
                        });
                    }
                }
                out.cond_loglik[n - 1] = FAILURE_LOGLIK;
                w.iter_mut().for_each(|v| *v = 1.0 / j as f64);
            }
        }

        // Filter statistics.
        {
            let fm = &mut out.filter_state_means[(n - 1) * dx..n * dx];
            for k in 0..j {
                accumulate_mean(fm, w[k], &x_p[k * dx..(k + 1) * dx]);
            }
        }
        if let Some(pt) = pert {
            let mean = &mut out.filter_means[(n - 1) * p..n * p];
            for k in 0..j {
                accumulate_mean(mean, w[k], &theta_p[k * p..(k + 1) * p]);
            }
            let sd = pt.walk.sd();
            // Prediction variance for time n+1 lives in row n; row 0 is time 1.
            if n < n_steps {
                let var = weighted_var(&theta_p, p, &w, mean);
                let row = &mut out.pred_variances[n * p..(n + 1) * p];
                for i in 0..p {
                    row[i] = var[i] + if pt.ivp[i] { 0.0 } else { sd[i] * sd[i] };
                }
            }
            if n == 1 {
                let row = &mut out.pred_variances[..p];
                for i in 0..p {
                    row[i] = out.initial_swarm_var[i] + if pt.ivp[i] { 0.0 } else { sd[i] * sd[i] };
                }
            }
        }

        // Resample.
        let k_idx = opts
            .resampler
            .resample(&w, j, &mut step.substream("resample").generator());

        // Fixed-lag smoothing.
        let smoothing = track.smooth_states || smooth_params || track.keep_state_samples;
        if smoothing {
            let lags: Vec<usize> = if n == n_steps {
                (0..=lag.min(n)).collect()
            } else if n >= lag {
                vec![lag]
            } else {
                Vec::new()
            };
            for l in lags {
                let tt = n - l;
                if l == 0 {
                    smooth_row(
                        &mut out, track, smooth_params, tt, &w, &k_idx, dx, p,
                        |k| &x_p[k * dx..(k + 1) * dx],
                        |k| &theta_p[k * p..(k + 1) * p],
                    );
                } else {
                    hist.trace(n, l, &mut traced);
                    let tr = &traced;
                    let h = &hist;
                    smooth_row(
                        &mut out, track, smooth_params, tt, &w, &k_idx, dx, p,
                        |k| h.state(tt, tr[k]),
                        |k| h.param(tt, tr[k]),
                    );
                }
            }
        }

        for (dst, &src) in x_f.chunks_exact_mut(dx).zip(&k_idx) {
            dst.copy_from_slice(&x_p[src * dx..(src + 1) * dx]);
        }
        if pert.is_some() {
            for (dst, &src) in theta_f.chunks_exact_mut(p).zip(&k_idx) {
                dst.copy_from_slice(&theta_p[src * p..(src + 1) * p]);
            }
        }
        if needs_history {
            hist.push(n, &x_f, pert.map(|_| theta_f.as_slice()), Some(&k_idx));
        }
        if n == lag && pert.is_some() {
            out.lag_swarm_mean = column_mean(&theta_f, p);
        }
        t_prev = t;
    }

    out.loglik = out.cond_loglik.iter().sum();
    if track.keep_final_swarm && pert.is_some() {
        out.final_swarm = theta_f;
    }
    Ok(out)
}

#[allow(clippy::too_many_arguments)]
fn smooth_row<'s, FX, FT>(
    out: &mut PassOutput,
    track: &Tracking,
    smooth_params: bool,
    tt: usize,
    w: &[f64],
    resampled: &[usize],
    dx: usize,
    p: usize,
    state_of: FX,
    param_of: FT,
) where
    FX: Fn(usize) -> &'s [f64],
    FT: Fn(usize) -> &'s [f64],
{
    let j = w.len();
    if track.smooth_states || track.keep_state_samples {
        let mut mean = vec![0.0; dx];
        for k in 0..j {
            accumulate_mean(&mut mean, w[k], state_of(k));
        }
        if track.smooth_states {
            let mut var = vec![0.0; dx];
            for k in 0..j {
                for (v, (x, m)) in var.iter_mut().zip(state_of(k).iter().zip(&mean)) {
                    *v += w[k] * (x - m) * (x - m);
                }
            }
            out.smoothed_state_means[tt * dx..(tt + 1) * dx].copy_from_slice(&mean);
            out.smoothed_state_vars[tt * dx..(tt + 1) * dx].copy_from_slice(&var);
        }
        if track.keep_state_samples && tt >= 1 {
            // Equally weighted: lineages of the resampled particles.
            let base = (tt - 1) * j * dx;
            for (k, &src) in resampled.iter().enumerate() {
                out.state_samples[base + k * dx..base + (k + 1) * dx].copy_from_slice(state_of(src));
            }
        }
    }
    if smooth_params {
        let mut mean = vec![0.0; p];
        for k in 0..j {
            accumulate_mean(&mut mean, w[k], param_of(k));
        }
        if track.param_cov {
            weighted_cov_into_fn(p, w, &mean, &mut out.smoothed_covs[tt * p * p..(tt + 1) * p * p], &param_of);
        }
        out.smoothed_means[tt * p..(tt + 1) * p].copy_from_slice(&mean);
    }
}

fn check_perturbation(pt: &Perturbation, p: usize, j: usize) -> Result<()> {
    let bad = |what: &str| Err(PompError::InvalidArgument(format!("perturbation {what} has wrong length")));
    if pt.transforms.len() != p {
        return bad("transforms");
    }
    if pt.ivp.len() != p {
        return bad("IVP mask");
    }
    if pt.walk.sd().len() != p {
        return bad("walk scales");
    }
    if let Walk::WhiteNoise { center, .. } = &pt.walk {
        if center.len() != p {
            return bad("center");
        }
    }
    match &pt.init {
        SwarmInit::Draw { center, sd } => {
            if center.len() != p || sd.len() != p {
                return bad("initial swarm");
            }
        }
        SwarmInit::Given { swarm, sd } => {
            if swarm.len() != j * p || sd.len() != p {
                return bad("carried swarm");
            }
        }
    }
    if pt.walk.sd().iter().any(|s| !(*s >= 0.0) || !s.is_finite()) {
        return Err(PompError::InvalidArgument("perturbation scales must be finite and nonnegative".into()));
    }
    Ok(())
}

fn particle_theta<'a>(
    params: &'a Params<'_>,
    transforms: Option<&[ParamTransform]>,
    swarm: &'a [f64],
    k: usize,
    p: usize,
    scratch: &'a mut [f64],
) -> &'a [f64] {
    match params {
        Params::Fixed(th) => th,
        Params::Perturbed(_) => {
            let est = &swarm[k * p..(k + 1) * p];
            let tr = transforms.expect("perturbed pass carries transforms");
            if tr.iter().all(|t| *t == ParamTransform::Identity) {
                est
            } else {
                for i in 0..p {
                    scratch[i] = tr[i].to_natural(est[i]);
                }
                scratch
            }
        }
    }
}

pub(crate) fn column_mean(m: &[f64], p: usize) -> Vec<f64> {
    let rows = m.len() / p;
    let mut out = vec![0.0; p];
    for r in m.chunks_exact(p) {
        for (o, v) in out.iter_mut().zip(r) {
            *o += v;
        }
    }
    out.iter_mut().for_each(|o| *o /= rows as f64);
    out
}

pub(crate) fn column_variance(m: &[f64], p: usize) -> Vec<f64> {
    let rows = m.len() / p;
    let mean = column_mean(m, p);
    let mut out = vec![0.0; p];
    for r in m.chunks_exact(p) {
        for i in 0..p {
            out[i] += (r[i] - mean[i]).powi(2);
        }
    }
    out.iter_mut().for_each(|o| *o /= rows as f64);
    out
}

fn weighted_var(m: &[f64], p: usize, w: &[f64], mean: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; p];
    for (r, &wk) in m.chunks_exact(p).zip(w) {
        for i in 0..p {
            out[i] += wk * (r[i] - mean[i]).powi(2);
        }
    }
    out
}

fn weighted_cov_into(m: &[f64], p: usize, w: &[f64], mean: &[f64], out: &mut [f64], idx: impl Fn(usize) -> usize) {
    weighted_cov_into_fn(p, w, mean, out, &|k| {
        let r = idx(k);
        &m[r * p..(r + 1) * p]
    });
}

fn weighted_cov_into_fn<'s>(p: usize, w: &[f64], mean: &[f64], out: &mut [f64], row: &dyn Fn(usize) -> &'s [f64]) {
    out.iter_mut().for_each(|o| *o = 0.0);
    let mut d = vec![0.0; p];
    for (k, &wk) in w.iter().enumerate() {
        if wk == 0.0 {
            continue;
        }
        let r = row(k);
        for i in 0..p {
            d[i] = r[i] - mean[i];
        }
        for a in 0..p {
            if d[a] == 0.0 {
                continue;
            }
            let da = wk * d[a];
            for b in a..p {
                out[a * p + b] += da * d[b];
            }
        }
    }
    for a in 0..p {
        for b in 0..a {
            out[a * p + b] = out[b * p + a];
        }
    }
}
