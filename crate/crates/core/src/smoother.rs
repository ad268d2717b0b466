//! Fixed-lag particle smoothing by ancestry tracing.
//!
//! The smoothed estimate at time `n` is read from the time-`(n+L)` particle
//! cloud, each particle traced back `L` generations and weighted by its
//! time-`(n+L)` weight. Times after `N - L` use the final cloud traced back
//! `N - n` generations. Only the last `L` generations are kept.

use crate::engine::{self, FilterOptions, Params, Perturbation, SwarmInit, Tracking, Walk};
use crate::error::{PompError, Result};
use crate::filter::{perturbed_result, PerturbedFilterResult};
use crate::model::{fmt_f64, ModelSpec, ParamVector, TimeSeriesData};
use crate::perturb::PerturbationSpec;
use crate::rng::RngStream;
use crate::table::RowMatrix;
use serde::{Deserialize, Serialize};
use std::collections::VecDeque;
use std::io::Write;

/// Ring buffer of resampling parent indices. Row `n` holds, for each
/// post-resampling particle at time `n`, the index of its time-`(n-1)` parent.
/// Indices are 0-based.
#[derive(Debug, Clone)]
pub struct AncestryBuffer {
    capacity: usize,
    n_particles: usize,
    rows: VecDeque<Vec<usize>>,
    /// Time of the newest row; 0 when empty.
    latest: usize,
}

impl AncestryBuffer {
    /// Keeps at most `capacity` generations.
    pub fn new(capacity: usize, n_particles: usize) -> Self {
        AncestryBuffer {
            capacity: capacity.max(1),
            n_particles,
            rows: VecDeque::with_capacity(capacity.max(1)),
            latest: 0,
        }
    }

    /// Build from a full `N x J` parent matrix (row `k` is time `k+1`).
    pub fn from_rows(rows: Vec<Vec<usize>>) -> Result<Self> {
        let j = rows.first().map_or(0, Vec::len);
        let mut buf = AncestryBuffer::new(rows.len(), j);
        for r in rows {
            buf.push(r)?;
        }
        Ok(buf)
    }

    pub fn latest_time(&self) -> usize {
        self.latest
    }

    /// Append the parent row for time `latest_time() + 1`.
    pub fn push(&mut self, parents: Vec<usize>) -> Result<()> {
        if parents.len() != self.n_particles {
            return Err(PompError::InvalidArgument(format!(
                "ancestry row has {} entries, expected {}",
                parents.len(),
                self.n_particles
            )));
        }
        if let Some(&bad) = parents.iter().find(|&&k| k >= self.n_particles) {
            return Err(PompError::Range {
                index: bad,
                detail: format!("parent index for {} particles", self.n_particles),
            });
        }
        if self.rows.len() == self.capacity {
            self.rows.pop_front();
        }
        self.rows.push_back(parents);
        self.latest += 1;
        Ok(())
    }

    pub(crate) fn push_slice(&mut self, parents: &[usize]) {
        let mut row = if self.rows.len() == self.capacity {
            self.rows.pop_front().unwrap_or_default()
        } else {
            Vec::with_capacity(self.n_particles)
        };
        row.clear();
        row.extend_from_slice(parents);
        self.rows.push_back(row);
        self.latest += 1;
    }

    fn row(&self, n: usize) -> Option<&[usize]> {
        let oldest = self.latest + 1 - self.rows.len();
        if n == 0 || n > self.latest || n < oldest {
            return None;
        }
        Some(&self.rows[n - oldest])
    }

    /// `a_L(n, j)`: compose `L` parent lookups starting from particle `j` at time `n`.
    pub fn trace(&self, n: usize, lag: usize, j: usize) -> Result<usize> {
        if j >= self.n_particles {
            return Err(PompError::Range {
                index: j,
                detail: format!("particle index for {} particles", self.n_particles),
            });
        }
        if lag > n {
            return Err(PompError::Range {
                index: lag,
                detail: format!("lag exceeds the {n} generations before time {n}"),
            });
        }
        let mut a = j;
        for l in 0..lag {
            let row = self.row(n - l).ok_or_else(|| PompError::Range {
                index: n - l,
                detail: format!(
                    "ancestry row not retained (have times {}..={})",
                    self.latest + 1 - self.rows.len(),
                    self.latest
                ),
            })?;
            a = row[a];
        }
        Ok(a)
    }

    /// Trace every particle; `out[j] = a_L(n, j)`. Panics if rows are missing.
    pub(crate) fn trace_all(&self, n: usize, lag: usize, out: &mut [usize]) {
        for (j, o) in out.iter_mut().enumerate() {
            *o = j;
        }
        for l in 0..lag {
            let row = self.row(n - l).expect("ancestry row retained");
            for o in out.iter_mut() {
                *o = row[*o];
            }
        }
    }
}

/// Free-function form of [`AncestryBuffer::trace`].
pub fn trace_ancestry(buf: &AncestryBuffer, n: usize, lag: usize, j: usize) -> Result<usize> {
    buf.trace(n, lag, j)
}

/// Which conditional log-likelihood decomposition to report.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LoglikForm {
    /// `log(J^-1 sum_j w(n, j))` per step.
    #[default]
    Filter,
    /// `log(J^-1 sum_j w(n+L, j))` for `n <= N-L`, and the time-`N` term after.
    LagShifted,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct SmoothOptions {
    pub filter: FilterOptions,
    pub loglik_form: LoglikForm,
    /// Keep the `N x J x d_x` equally weighted smoothing sample.
    pub keep_samples: bool,
}

#[derive(Debug, Clone)]
pub struct SmoothResult {
    pub lag: usize,
    /// Sum of `cond_loglik`.
    pub loglik: f64,
    /// Conditional log-likelihoods in the form chosen by `loglik_form`.
    pub cond_loglik: Vec<f64>,
    pub loglik_form: LoglikForm,
    /// Standard per-step decomposition (same as the filter).
    pub filter_cond_loglik: Vec<f64>,
    /// `N x d_x` smoothed state means, times `1..=N`.
    pub state_means: RowMatrix,
    /// `N x d_x` smoothed state variances.
    pub state_vars: RowMatrix,
    /// `N x d_x` filter state means for comparison.
    pub filter_state_means: RowMatrix,
    /// Smoothing sample, `N` blocks of `J x d_x`, if requested.
    pub samples: Vec<RowMatrix>,
    pub n_failures: usize,
}

impl SmoothResult {
    fn from_pass(out: &engine::PassOutput, lag: usize, j: usize, opts: &SmoothOptions) -> Self {
        let n = out.n_steps;
        let dx = out.dim_state;
        let lagged = lag_shift(&out.cond_loglik, lag);
        let cond = match opts.loglik_form {
            LoglikForm::Filter => out.cond_loglik.clone(),
            LoglikForm::LagShifted => lagged,
        };
        let samples = if out.state_samples.is_empty() {
            Vec::new()
        } else {
            out.state_samples
                .chunks_exact(j * dx)
                .map(|b| RowMatrix::new(j, dx, b.to_vec()))
                .collect()
        };
        SmoothResult {
            lag,
            loglik: cond.iter().sum(),
            cond_loglik: cond,
            loglik_form: opts.loglik_form,
            filter_cond_loglik: out.cond_loglik.clone(),
            state_means: RowMatrix::new(n, dx, out.smoothed_state_means[dx..].to_vec()),
            state_vars: RowMatrix::new(n, dx, out.smoothed_state_vars[dx..].to_vec()),
            filter_state_means: RowMatrix::new(n, dx, out.filter_state_means.clone()),
            samples,
            n_failures: out.n_failures,
        }
    }
}

/// Lag-shifted conditional log-likelihoods: term `n` is the filter term at
/// `min(n + L, N)`.
pub fn lag_shift(cond: &[f64], lag: usize) -> Vec<f64> {
    let n = cond.len();
    (0..n).map(|k| cond[(k + lag).min(n - 1)]).collect()
}

/// Fixed-lag particle smoother at fixed `theta`. Requires `0 <= L <= N-1`.
pub fn psmooth(
    model: &ModelSpec,
    theta: &ParamVector,
    data: &TimeSeriesData,
    j: usize,
    lag: usize,
    rng: &RngStream,
    opts: &SmoothOptions,
) -> Result<SmoothResult> {
    if data.is_empty() || lag >= data.len() {
        return Err(PompError::InvalidArgument(format!(
            "lag must satisfy 0 <= L <= N-1 (L = {lag}, N = {})",
            data.len()
        )));
    }
    let track = Tracking {
        lag,
        smooth_states: true,
        keep_state_samples: opts.keep_samples,
        ..Default::default()
    };
    let out = engine::run_pass(model, data, j, &Params::Fixed(theta.values()), &track, &opts.filter, rng)?;
    Ok(SmoothResult::from_pass(&out, lag, j, opts))
}

/// Output of a perturbed smoothing pass (estimation scale).
#[derive(Debug, Clone)]
pub struct PerturbedSmoothResult {
    pub filter: PerturbedFilterResult,
    pub lag: usize,
    /// `(N+1) x p`; row `n` is the smoothed parameter mean at time `n`.
    pub param_means: RowMatrix,
    /// `N + 1` smoothed `p x p` covariances.
    pub param_covs: Vec<RowMatrix>,
}

impl PerturbedSmoothResult {
    /// CSV `n,cond_loglik,theta_smooth_1..p,V_1..p` for times `1..=N`
    /// (variances are covariance diagonals).
    pub fn write_csv<W: Write>(&self, mut w: W, comments: &[String]) -> Result<()> {
        for c in comments {
            writeln!(w, "# {c}")?;
        }
        let p = self.param_means.cols();
        let mut header = vec!["n".to_string(), "cond_loglik".to_string()];
        header.extend((1..=p).map(|i| format!("theta_smooth_{i}")));
        header.extend((1..=p).map(|i| format!("V_{i}")));
        writeln!(w, "{}", header.join(","))?;
        for (k, c) in self.filter.filter.cond_loglik.iter().enumerate() {
            let n = k + 1;
            let mut line = format!("{n},{}", fmt_f64(*c));
            for v in self.param_means.row(n) {
                line.push(',');
                line.push_str(&fmt_f64(*v));
            }
            for i in 0..p {
                line.push(',');
                line.push_str(&fmt_f64(self.param_covs[n].get(i, i)));
            }
            writeln!(w, "{line}")?;
        }
        Ok(())
    }
}

pub(crate) fn smooth_pass_result(out: &engine::PassOutput, j: usize, lag: usize) -> PerturbedSmoothResult {
    let n = out.n_steps;
    let p = out.n_params;
    PerturbedSmoothResult {
        filter: perturbed_result(out, j),
        lag,
        param_means: RowMatrix::new(n + 1, p, out.smoothed_means.clone()),
        param_covs: out
            .smoothed_covs
            .chunks_exact(p * p)
            .map(|c| RowMatrix::new(p, p, c.to_vec()))
            .collect(),
    }
}

/// Perturbed fixed-lag smoother: random-walk parameter perturbation around
/// `theta_center` at iteration `m`, with smoothed parameter means and
/// covariances at lag `pert.lag`.
#[allow(clippy::too_many_arguments)]
pub fn psmooth_perturbed(
    model: &ModelSpec,
    theta_center: &ParamVector,
    pert: &PerturbationSpec,
    m: usize,
    data: &TimeSeriesData,
    j: usize,
    rng: &RngStream,
    opts: &FilterOptions,
) -> Result<PerturbedSmoothResult> {
    if m == 0 {
        return Err(PompError::InvalidArgument("iteration index m starts at 1".into()));
    }
    pert.validate(model.n_params())?;
    let params = Params::Perturbed(Perturbation {
        init: SwarmInit::Draw {
            center: model.to_estimation(theta_center.values()),
            sd: pert.init_sd(m),
        },
        walk: Walk::Random { sd: pert.walk_sd(m) },
        transforms: model.transforms.clone(),
        ivp: pert.ivp_mask(model.n_params()),
    });
    let track = Tracking {
        lag: pert.lag,
        smooth_params: true,
        param_cov: true,
        keep_final_swarm: true,
        ..Default::default()
    };
    let out = engine::run_pass(model, data, j, &params, &track, opts, rng)?;
    Ok(smooth_pass_result(&out, j, pert.lag))
}
