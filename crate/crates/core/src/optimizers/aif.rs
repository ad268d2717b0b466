use super::score::{score_estimate, ScoreMode};
use super::{perturbation, run, update_ivps, IteratedOptions, Iterate, OptimizerTrace};
use crate::engine::{SwarmInit, Tracking, Walk};
use crate::error::{PompError, Result};
use crate::model::{ModelSpec, ParamVector, TimeSeriesData};
use crate::rng::RngStream;
use crate::table::RowMatrix;
use serde::{Deserialize, Serialize};

/// Step sequences for accelerated iterated filtering, indexed from `m = 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccelSequences {
    pub alpha: Vec<f64>,
    pub lambda: Vec<f64>,
    pub beta: Vec<f64>,
    /// Reserved; not used by the update.
    #[serde(default)]
    pub gamma: Vec<f64>,
}

impl AccelSequences {
    /// `alpha_m = 2/(m+1)`, `lambda_m = lambda0/m`, `beta_m = lambda_m/2`.
    pub fn standard(m_total: usize, lambda0: f64) -> Self {
        let ms = 1..=m_total;
        let lambda: Vec<f64> = ms.clone().map(|m| lambda0 / m as f64).collect();
        AccelSequences {
            alpha: ms.map(|m| 2.0 / (m as f64 + 1.0)).collect(),
            beta: lambda.iter().map(|l| l / 2.0).collect(),
            lambda,
            gamma: Vec::new(),
        }
    }

    pub fn validate(&self, m_total: usize) -> Result<()> {
        let mut errs = Vec::new();
        for (name, s) in [("alpha", &self.alpha), ("lambda", &self.lambda), ("beta", &self.beta)] {
            if s.len() < m_total {
                errs.push(format!("sequence {name} has {} entries, need {m_total}", s.len()));
            }
        }
        if self.alpha.iter().any(|a| !(*a > 0.0 && *a <= 1.0)) {
            errs.push("alpha_m must lie in (0, 1]".into());
        }
        if self.alpha.first().is_some_and(|a| *a != 1.0) {
            errs.push("alpha_1 must be 1".into());
        }
        if self.lambda.iter().chain(&self.beta).any(|v| !(*v > 0.0 && v.is_finite())) {
            errs.push("lambda_m and beta_m must be positive".into());
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(PompError::Validation(errs))
        }
    }
}

/// Accelerated iterated filtering.
///
/// Keeps `(theta_m, theta_ag_m, theta_md_m)`. Each iteration perturbs the
/// parameters with fresh white noise around `theta_md_m`, estimates
/// `S_m = W^-1 sum_{n=1..N} (theta_bar_n - theta_md_m) / (N+1)` with
/// `W = a^(2(m-1)) diag(sigma^2)`, then sets `theta_m = theta_{m-1} + lambda_m S_m`
/// and `theta_ag_m = theta_md_m + beta_m S_m`. With `pert.lag = L > 0`,
/// `theta_bar_n` are lag-`L` smoothed means. The trace reports `theta_ag`;
/// `theta` and `theta_md` are in `aux`.
pub fn aif(
    model: &ModelSpec,
    theta0: &ParamVector,
    data: &TimeSeriesData,
    opts: &IteratedOptions,
    seqs: &AccelSequences,
    rng: &RngStream,
) -> Result<OptimizerTrace> {
    opts.validate(model, theta0, data)?;
    seqs.validate(opts.iterations)?;
    let pert = &opts.pert;
    let p = model.n_params();
    let n = data.len();
    let lag = pert.lag;
    let active = pert.active();
    let psi: Vec<f64> = pert.sigma.iter().map(|s| s * s).collect();
    let mut theta = Iterate::new(model, theta0)?;
    let mut ag = theta.clone();
    let mut trace = OptimizerTrace::new("aif", model, theta0);
    let (mut theta_rows, mut md_rows) = (RowMatrix::empty(), RowMatrix::empty());
    for m in 1..=opts.iterations {
        let k = m - 1;
        let prev_ag = ag.est.clone();
        let mut md = theta.clone();
        for &i in &active {
            md.set(i, (1.0 - seqs.alpha[k]) * ag.est[i] + seqs.alpha[k] * theta.est[i]);
        }
        let pp = perturbation(
            model,
            pert,
            SwarmInit::Draw {
                center: md.est.clone(),
                sd: pert.init_sd(m),
            },
            Walk::WhiteNoise {
                center: md.est.clone(),
                sd: pert.walk_sd(m),
            },
        );
        let track = Tracking {
            lag,
            smooth_params: lag > 0,
            ..Default::default()
        };
        let out = run(model, data, opts, pp, track, &rng.substream_index(m as u64))?;
        // Rows 0..=N with the time-0 row at the center, which adds nothing.
        let mut means = RowMatrix::empty();
        means.push_row(&md.est);
        for t in 1..=n {
            means.push_row(if lag > 0 {
                &out.smoothed_means[t * p..(t + 1) * p]
            } else {
                &out.filter_means[(t - 1) * p..t * p]
            });
        }
        let (_, walk) = crate::perturb::cooling(pert.cooling, pert.init_multiplier, m);
        let s = if active.is_empty() {
            vec![0.0; p]
        } else {
            score_estimate(&means, &md.est, &psi, &active, walk, ScoreMode::Theorem2)?
        };
        let prev_theta = theta.est.clone();
        for &i in &active {
            theta.set(i, prev_theta[i] + seqs.lambda[k] * s[i]);
            ag.set(i, md.est[i] + seqs.beta[k] * s[i]);
        }
        update_ivps(&mut theta, pert, &out);
        update_ivps(&mut ag, pert, &out);
        update_ivps(&mut md, pert, &out);
        ag.check_finite(m)?;
        theta.check_finite(m)?;
        trace.push(&ag, &prev_ag, &out, false);
        trace.push_score(&s);
        theta_rows.push_row(&theta.nat);
        md_rows.push_row(&md.nat);
    }
    trace.aux.push(("theta".into(), theta_rows));
    trace.aux.push(("theta_md".into(), md_rows));
    Ok(trace)
}
