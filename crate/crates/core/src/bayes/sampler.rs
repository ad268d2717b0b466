use super::{Chain, ProposalSpec};
use crate::engine::{self, FilterOptions, Params, Perturbation, SwarmInit, Tracking, Walk};
use crate::error::{PompError, Result};
use crate::filter::pfilter;
use crate::model::{ModelSpec, ParamVector, TimeSeriesData};
use crate::optimizers::{score_estimate, ScoreMode};
use crate::rng::RngStream;
use crate::table::RowMatrix;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

/// Particle marginal Metropolis-Hastings with a diagonal Gaussian random walk.
#[allow(clippy::too_many_arguments)]
pub fn pmmh(
    model: &ModelSpec,
    theta0: &ParamVector,
    data: &TimeSeriesData,
    m: usize,
    j: usize,
    proposal: &ProposalSpec,
    opts: &FilterOptions,
    rng: &RngStream,
) -> Result<Chain> {
    sample("pmmh", model, theta0, data, m, j, proposal, false, opts, rng)
}

/// Particle iterated filtering: PMMH whose proposal is centered at
/// `theta + epsilon * score(theta)`, the score coming from one perturbed pass
/// per step. The acceptance ratio has no correction for the drift.
#[allow(clippy::too_many_arguments)]
pub fn pif(
    model: &ModelSpec,
    theta0: &ParamVector,
    data: &TimeSeriesData,
    m: usize,
    j: usize,
    proposal: &ProposalSpec,
    opts: &FilterOptions,
    rng: &RngStream,
) -> Result<Chain> {
    sample("pif", model, theta0, data, m, j, proposal, true, opts, rng)
}

/// Natural-scale score at `theta` as used for the PIF drift.
///
/// The perturbed pass runs on the model's estimation scale with walk sd
/// `score_walk_fraction * q` and time-0 sd `score_init_multiplier` times
/// that, where `q` is the proposal scale mapped through the transform. The
/// smoothed means over the whole series feed the averaged score estimate,
/// which is mapped back by the chain rule. Parameters with a zero proposal
/// scale get 0.
pub fn pif_drift(
    model: &ModelSpec,
    theta: &[f64],
    data: &TimeSeriesData,
    j: usize,
    proposal: &ProposalSpec,
    opts: &FilterOptions,
    rng: &RngStream,
) -> Result<Vec<f64>> {
    let p = model.n_params();
    let deriv: Vec<f64> = (0..p).map(|i| model.transforms[i].derivative(theta[i])).collect();
    let walk: Vec<f64> = (0..p)
        .map(|i| proposal.score_walk_fraction * proposal.scales[i] * deriv[i].abs())
        .collect();
    let init: Vec<f64> = walk.iter().map(|s| s * proposal.score_init_multiplier).collect();
    let mut ivp = vec![false; p];
    for &i in &model.ivp_indices {
        ivp[i] = true;
    }
    let center = model.to_estimation(theta);
    let pert = Perturbation {
        init: SwarmInit::Draw {
            center: center.clone(),
            sd: init.clone(),
        },
        walk: Walk::Random {
            sd: (0..p).map(|i| if ivp[i] { 0.0 } else { walk[i] }).collect(),
        },
        transforms: model.transforms.clone(),
        ivp,
    };
    let track = Tracking {
        lag: data.len(),
        smooth_params: true,
        ..Default::default()
    };
    let out = engine::run_pass(model, data, j, &Params::Perturbed(pert), &track, opts, rng)?;
    let means = RowMatrix::new(out.n_steps + 1, p, out.smoothed_means);
    let psi: Vec<f64> = init.iter().map(|s| s * s).collect();
    let active = proposal.active();
    let s = score_estimate(&means, &center, &psi, &active, 1.0, ScoreMode::Theorem2)?;
    Ok((0..p).map(|i| s[i] * deriv[i]).collect())
}

fn log_prior(model: &ModelSpec, theta: &[f64]) -> Result<f64> {
    let lp = model
        .hooks
        .dprior(theta)
        .ok_or_else(|| PompError::InvalidModel("sampler requires a prior density (dprior)".into()))?;
    if lp.is_nan() {
        return Err(PompError::ModelContract("dprior returned NaN".into()));
    }
    Ok(lp)
}

/// Metropolis decision in ratio form.
pub(crate) fn accept(log_u: f64, proposed: f64, current: f64) -> bool {
    log_u < proposed - current
}

#[allow(clippy::too_many_arguments)]
fn sample(
    name: &str,
    model: &ModelSpec,
    theta0: &ParamVector,
    data: &TimeSeriesData,
    m: usize,
    j: usize,
    proposal: &ProposalSpec,
    drift: bool,
    opts: &FilterOptions,
    rng: &RngStream,
) -> Result<Chain> {
    let p = model.n_params();
    let mut errs = Vec::new();
    if j == 0 {
        errs.push("particles J must be at least 1".to_string());
    }
    if m == 0 {
        errs.push("chain length M must be at least 1".to_string());
    }
    if theta0.len() != p {
        errs.push("starting parameter vector has the wrong length".to_string());
    }
    if let Err(PompError::Validation(v)) = proposal.validate(p) {
        errs.extend(v);
    }
    if !errs.is_empty() {
        return Err(PompError::Validation(errs));
    }
    let mut theta = theta0.values().to_vec();
    let mut lp = log_prior(model, &theta)?;
    if !lp.is_finite() {
        return Err(PompError::InvalidArgument("prior density is zero or infinite at the starting point".into()));
    }
    let mut ll = pfilter(model, theta0, data, j, &rng.substream("init"), opts)?.loglik;
    let loglik0 = ll;
    let score_j = proposal.score_particles.unwrap_or(j);
    let active = proposal.active();

    let mut samples = RowMatrix::empty();
    let mut logliks = Vec::with_capacity(m);
    let mut logpriors = Vec::with_capacity(m);
    let mut accepted = Vec::with_capacity(m);
    let mut prop = vec![0.0; p];
    for step in 1..=m {
        let srng = rng.substream_index(step as u64);
        prop.copy_from_slice(&theta);
        if drift && !active.is_empty() {
            let s = pif_drift(model, &theta, data, score_j, proposal, opts, &srng.substream("score"))?;
            if s.iter().all(|v| v.is_finite()) {
                for &i in &active {
                    prop[i] += proposal.epsilon * s[i];
                }
            } else {
                log::warn!("non-finite score at step {step}; using zero drift");
            }
        }
        let mut g = srng.substream("propose").generator();
        for &i in &active {
            let z: f64 = StandardNormal.sample(&mut g);
            prop[i] += proposal.scales[i] * z;
        }
        let log_u = srng.substream("accept").generator().gen::<f64>().ln();

        let mut ok = false;
        if prop == theta {
            // Nothing moved: the incumbent's estimate is reused, so the ratio is 1.
            ok = true;
        } else {
            let lp_new = log_prior(model, &prop)?;
            if lp_new > f64::NEG_INFINITY {
                let pv = ParamVector::for_model(model, prop.clone())?;
                let ll_new = pfilter(model, &pv, data, j, &srng.substream("filter"), opts)?.loglik;
                if accept(log_u, lp_new + ll_new, lp + ll) {
                    theta.copy_from_slice(&prop);
                    lp = lp_new;
                    ll = ll_new;
                    ok = true;
                }
            }
        }
        samples.push_row(&theta);
        logliks.push(ll);
        logpriors.push(lp);
        accepted.push(ok);
    }
    Ok(Chain {
        algorithm: name.to_string(),
        param_names: model.param_names.clone(),
        theta0: theta0.values().to_vec(),
        loglik0,
        samples,
        loglik: logliks,
        logprior: logpriors,
        accepted,
        proposal: proposal.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::PompModel;
    use crate::rng::SimRng;
    use std::f64::consts::PI;
    use std::sync::Arc;

    /// `x_1 = theta + e`, `y_1 = x_1 + v`, unit variances, prior `theta ~ N(0, 1)`:
    /// the posterior given `y` is `N(y / 3, 2 / 3)`.
    struct OneStep;
    impl PompModel for OneStep {
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
        fn dprior(&self, th: &[f64]) -> Option<f64> {
            Some(-0.5 * th[0] * th[0])
        }
    }

    struct NoPrior;
    impl PompModel for NoPrior {
        fn rinit(&self, _: &[f64], _: &mut SimRng, x0: &mut [f64]) {
            x0[0] = 0.0;
        }
        fn rprocess(&self, _: &mut [f64], _: &[f64], _: f64, _: f64, _: &mut SimRng) {}
        fn dmeasure(&self, _: &[f64], _: &[f64], _: &[f64], _: f64) -> f64 {
            0.0
        }
    }

    fn toy(h: Arc<dyn PompModel>, ys: &[f64]) -> (ModelSpec, TimeSeriesData, ParamVector) {
        let times: Vec<f64> = (1..=ys.len()).map(|k| k as f64).collect();
        let m = ModelSpec::new("toy", 1, 1, vec!["theta".into()], vec![], 0.0, times.clone(), h).unwrap();
        let d = TimeSeriesData::new(times, 1, ys.to_vec()).unwrap();
        let th = m.params(&[("theta", 0.0)]).unwrap();
        (m, d, th)
    }

    #[test]
    fn zero_scales_hold_the_chain() {
        let (m, d, th) = toy(Arc::new(OneStep), &[1.5]);
        let prop = ProposalSpec::mvn_diag_rw(vec![0.0]);
        let c = pmmh(&m, &th, &d, 50, 20, &prop, &FilterOptions::default(), &RngStream::new(3)).unwrap();
        assert!(c.accepted.iter().all(|a| *a));
        assert!(c.samples.iter_rows().all(|r| r == [0.0]));
        assert!(c.loglik.iter().all(|l| *l == c.loglik0));
    }

    #[test]
    fn rejected_rows_copy_previous() {
        let (m, d, th) = toy(Arc::new(OneStep), &[1.5]);
        let prop = ProposalSpec::mvn_diag_rw(vec![2.0]);
        let c = pmmh(&m, &th, &d, 300, 20, &prop, &FilterOptions::default(), &RngStream::new(4)).unwrap();
        assert!(c.accepted.iter().any(|a| !a));
        for k in 1..c.len() {
            if !c.accepted[k] {
                assert_eq!(c.samples.row(k), c.samples.row(k - 1));
                assert_eq!(c.loglik[k].to_bits(), c.loglik[k - 1].to_bits());
            }
        }
    }

    #[test]
    fn conjugate_posterior_mean() {
        let y = 1.5;
        let (m, d, th) = toy(Arc::new(OneStep), &[y]);
        let prop = ProposalSpec::mvn_diag_rw(vec![1.2]);
        let c = pmmh(&m, &th, &d, 20_000, 200, &prop, &FilterOptions::default(), &RngStream::new(5)).unwrap();
        let xs = c.trace(0, 1000);
        let mean = xs.iter().sum::<f64>() / xs.len() as f64;
        let se = (2.0f64 / 3.0).sqrt() / super::super::ess(&xs).unwrap().sqrt();
        assert!((mean - y / 3.0).abs() < 3.0 * se, "mean {mean}, se {se}");
    }

    #[test]
    fn zero_epsilon_pif_is_pmmh() {
        let (m, d, th) = toy(Arc::new(OneStep), &[0.3, -0.2, 1.0]);
        let prop = ProposalSpec::mvn_diag_rw(vec![0.5]);
        let rng = RngStream::new(6);
        let a = pmmh(&m, &th, &d, 200, 30, &prop, &FilterOptions::default(), &rng).unwrap();
        let b = pif(&m, &th, &d, 200, 30, &prop, &FilterOptions::default(), &rng).unwrap();
        assert_eq!(a.samples, b.samples);
        assert_eq!(a.accepted, b.accepted);
        assert_eq!(a.loglik, b.loglik);
    }

    #[test]
    fn drift_matches_analytic_score() {
        // y_n ~ N(theta, 2) i.i.d. given theta; score sum(y - theta) / 2.
        let ys: Vec<f64> = (0..30).map(|k| 1.0 + (k as f64 * 0.7).sin()).collect();
        let (m, d, _) = toy(Arc::new(OneStep), &ys);
        let prop = ProposalSpec::mvn_diag_rw(vec![0.05]);
        let theta = 0.5;
        let exact: f64 = ys.iter().map(|y| (y - theta) / 2.0).sum();
        let mut errs = Vec::new();
        for seed in 0..10 {
            let s = pif_drift(&m, &[theta], &d, 5000, &prop, &FilterOptions::default(), &RngStream::new(seed)).unwrap();
            errs.push((s[0] / exact - 1.0).abs());
        }
        errs.sort_by(f64::total_cmp);
        assert!(errs[5] < 0.25, "{errs:?}");
    }

    #[test]
    fn accept_is_shift_invariant() {
        for (u, a, b) in [(-0.3, -10.0, -10.5), (-1.2, 3.0, 2.0), (-0.01, 0.0, 0.0)] {
            assert_eq!(accept(u, a, b), accept(u, a + 1000.0, b + 1000.0));
        }
    }

    #[test]
    fn requires_prior_and_finite_start() {
        let (m, d, th) = toy(Arc::new(NoPrior), &[0.0]);
        let prop = ProposalSpec::mvn_diag_rw(vec![0.1]);
        assert!(matches!(
            pmmh(&m, &th, &d, 5, 5, &prop, &FilterOptions::default(), &RngStream::new(1)),
            Err(PompError::InvalidModel(_))
        ));
        let m = crate::benchmarks::gompertz::gompertz_model_with_len(1);
        let d = TimeSeriesData::new(vec![1.0], 1, vec![1.0]).unwrap();
        let th = m.params(&[("r", 2.0), ("K", 1.0), ("sigma", 0.1), ("tau", 0.1), ("X_0", 1.0)]).unwrap();
        let prop = ProposalSpec::mvn_diag_rw(vec![0.01; 5]);
        assert!(pmmh(&m, &th, &d, 5, 5, &prop, &FilterOptions::default(), &RngStream::new(1)).is_err());
    }
}
