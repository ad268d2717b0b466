use super::score::{score_estimate, ScoreMode};
use super::{perturbation, run, update_ivps, IteratedOptions, Iterate, OptimizerTrace};
use crate::engine::{SwarmInit, Tracking, Walk};
use crate::error::{PompError, Result};
use crate::model::{ModelSpec, ParamVector, TimeSeriesData};
use crate::perturb::cooling;
use crate::rng::RngStream;
use crate::table::RowMatrix;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

/// How the score and information are formed from the smoothed moments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Is2Form {
    /// `S = W^-1 mean_n(theta_bar_n - theta)`, `I = -W^-1 (mean_n V_nn - W) W^-1`.
    #[default]
    Averaged,
    /// Per-time Gaussian identities against the random-walk prior variance
    /// `P_n = (C^2 + n) W`: `S = mean_n V_nn^-1 (theta_bar_n - theta)`,
    /// `I = mean_n (V_nn^-1 - P_n^-1)`.
    Gaussian,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Is2Options {
    #[serde(default)]
    pub form: Is2Form,
    /// Relative eigenvalue floor `eps = floor * trace(I) / p`.
    pub eig_floor: f64,
    /// Condition number above which the Newton step is abandoned.
    pub max_condition: f64,
}

impl Default for Is2Options {
    fn default() -> Self {
        Is2Options {
            form: Is2Form::Averaged,
            eig_floor: 1e-6,
            max_condition: 1e12,
        }
    }
}

/// Outcome of the positive-definiteness guard.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct GuardedStep {
    pub step: Vec<f64>,
    pub fallback: bool,
}

/// Newton direction `I^-1 S`, regularized to be positive definite. Falls back
/// to `S / max|diag I|` (or `W S` when `I` has a zero diagonal) when the
/// regularized matrix is still ill-conditioned.
pub(crate) fn guarded_step(info: &DMatrix<f64>, score: &DVector<f64>, w: &DVector<f64>, o: &Is2Options) -> GuardedStep {
    let q = score.len();
    let sym = (info + info.transpose()) * 0.5;
    let eig = sym.clone().symmetric_eigen();
    let lmin = eig.eigenvalues.min();
    let eps = o.eig_floor * sym.trace() / q as f64;
    let rho = (eps - lmin).max(0.0);
    let lo = lmin + rho;
    let hi = eig.eigenvalues.max() + rho;
    if lo > 0.0 && hi / lo <= o.max_condition && lo.is_finite() && hi.is_finite() {
        let reg = &sym + DMatrix::identity(q, q) * rho;
        if let Some(ch) = reg.cholesky() {
            return GuardedStep {
                step: ch.solve(score).iter().copied().collect(),
                fallback: false,
            };
        }
    }
    let dmax = sym.diagonal().iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let step = if dmax > 0.0 && dmax.is_finite() {
        score.iter().map(|s| s / dmax).collect()
    } else {
        score.iter().zip(w.iter()).map(|(s, wi)| s * wi).collect()
    };
    GuardedStep { step, fallback: true }
}

/// Second-order iterated smoothing.
///
/// Each iteration runs a random-walk perturbed fixed-lag smoother (lag
/// `pert.lag >= 1`) and forms, over the active coordinates with
/// `W = a^(2(m-1)) diag(sigma^2)`,
/// `S_m = W^-1 mean_n (theta_bar_n - theta_{m-1})` and
/// `I_m = -W^-1 (mean_n V_nn - W) W^-1`, averaging over `n = 0..=N`.
/// The step is `theta_m = theta_{m-1} + I_m^-1 S_m` behind a
/// positive-definiteness guard.
pub fn is2(
    model: &ModelSpec,
    theta0: &ParamVector,
    data: &TimeSeriesData,
    opts: &IteratedOptions,
    guard: &Is2Options,
    rng: &RngStream,
) -> Result<OptimizerTrace> {
    opts.validate(model, theta0, data)?;
    let pert = &opts.pert;
    if pert.lag == 0 {
        return Err(PompError::InvalidArgument("is2 needs a fixed lag L >= 1".into()));
    }
    let p = model.n_params();
    let n = data.len();
    let active = pert.active();
    let q = active.len();
    let psi: Vec<f64> = pert.sigma.iter().map(|s| s * s).collect();
    let mut it = Iterate::new(model, theta0)?;
    let mut trace = OptimizerTrace::new("is2", model, theta0);
    for m in 1..=opts.iterations {
        let prev = it.est.clone();
        let pp = perturbation(
            model,
            pert,
            SwarmInit::Draw {
                center: prev.clone(),
                sd: pert.init_sd(m),
            },
            Walk::Random { sd: pert.walk_sd(m) },
        );
        let track = Tracking {
            lag: pert.lag,
            smooth_params: true,
            param_cov: true,
            ..Default::default()
        };
        let out = run(model, data, opts, pp, track, &rng.substream_index(m as u64))?;
        let (_, walk) = cooling(pert.cooling, pert.init_multiplier, m);
        let mut fallback = false;
        let mut full_score = vec![0.0; p];
        if q > 0 {
            let means = RowMatrix::new(n + 1, p, out.smoothed_means.clone());
            full_score = score_estimate(&means, &prev, &psi, &active, walk, ScoreMode::Theorem2)?;
            let w = DVector::from_iterator(q, active.iter().map(|&i| walk * walk * psi[i]));
            let cov_at = |t: usize| {
                let cov = &out.smoothed_covs[t * p * p..(t + 1) * p * p];
                DMatrix::from_fn(q, q, |a, b| cov[active[a] * p + active[b]])
            };
            let (info, s) = match guard.form {
                Is2Form::Averaged => {
                    let mut vbar = DMatrix::zeros(q, q);
                    for t in 0..=n {
                        vbar += cov_at(t);
                    }
                    vbar /= (n + 1) as f64;
                    let winv = DMatrix::from_diagonal(&w.map(|v| 1.0 / v));
                    let info = -(&winv * (vbar - DMatrix::from_diagonal(&w)) * &winv);
                    (info, DVector::from_iterator(q, active.iter().map(|&i| full_score[i])))
                }
                Is2Form::Gaussian => {
                    let c2 = pert.init_multiplier * pert.init_multiplier;
                    let mut info = DMatrix::zeros(q, q);
                    let mut s = DVector::zeros(q);
                    let mut used = 0usize;
                    for t in 0..=n {
                        let Some(vinv) = cov_at(t).try_inverse() else { continue };
                        let dev = DVector::from_iterator(q, active.iter().map(|&i| means.get(t, i) - prev[i]));
                        s += &vinv * dev;
                        let pinv = DMatrix::from_diagonal(&w.map(|v| 1.0 / ((c2 + t as f64) * v)));
                        info += vinv - pinv;
                        used += 1;
                    }
                    if used == 0 {
                        return Err(PompError::Numerical(format!(
                            "smoothed parameter covariance is singular at every time (iteration {m})"
                        )));
                    }
                    info /= used as f64;
                    s /= used as f64;
                    for (a, &i) in active.iter().enumerate() {
                        full_score[i] = s[a];
                    }
                    (info, s)
                }
            };
            let g = guarded_step(&info, &s, &w, guard);
            fallback = g.fallback;
            for (a, &i) in active.iter().enumerate() {
                it.set(i, prev[i] + g.step[a]);
            }
            trace.information.push(RowMatrix::new(q, q, info.transpose().as_slice().to_vec()));
        }
        update_ivps(&mut it, pert, &out);
        it.check_finite(m)?;
        trace.push(&it, &prev, &out, fallback);
        trace.push_score(&full_score);
    }
    Ok(trace)
}
