//! Bootstrap particle filter and its parameter-perturbed variant.

use crate::engine::{self, Params, Perturbation, SwarmInit, Tracking, Walk};
use crate::error::{PompError, Result};
use crate::model::{fmt_f64, ModelSpec, ParamVector, TimeSeriesData};
use crate::perturb::PerturbationSpec;
use crate::rng::RngStream;
use crate::table::RowMatrix;
use serde_json::json;
use std::io::Write;

pub use crate::engine::{FilterOptions, FAILURE_LOGLIK};

#[derive(Debug, Clone)]
pub struct FilterResult {
    pub loglik: f64,
    pub cond_loglik: Vec<f64>,
    /// `N x p` filter means of the perturbed parameters (estimation scale);
    /// empty for unperturbed runs.
    pub filter_means: RowMatrix,
    /// `N x p` prediction variances; row `n-1` is `V_n`. Empty for unperturbed runs.
    pub pred_variances: RowMatrix,
    /// `N x d_x` weighted means of the predicted states.
    pub state_means: RowMatrix,
    pub n_failures: usize,
    pub n_particles: usize,
}

impl FilterResult {
    pub(crate) fn from_pass(out: &engine::PassOutput, j: usize) -> Self {
        let n = out.n_steps;
        let p = out.n_params;
        let mat = |v: &Vec<f64>, cols: usize| {
            if v.is_empty() {
                RowMatrix::empty()
            } else {
                RowMatrix::new(n, cols, v.clone())
            }
        };
        FilterResult {
            loglik: out.loglik,
            cond_loglik: out.cond_loglik.clone(),
            filter_means: mat(&out.filter_means, p),
            pred_variances: mat(&out.pred_variances, p),
            state_means: mat(&out.filter_state_means, out.dim_state),
            n_failures: out.n_failures,
            n_particles: j,
        }
    }

    pub fn summary_json(&self) -> serde_json::Value {
        json!({
            "loglik": self.loglik,
            "n_failures": self.n_failures,
            "n_particles": self.n_particles,
            "n_steps": self.cond_loglik.len(),
        })
    }

    /// Per-step CSV: `n,cond_loglik,theta_bar_1..p,V_1..p` (the parameter
    /// columns are omitted for unperturbed runs).
    pub fn write_csv<W: Write>(&self, mut w: W, comments: &[String]) -> Result<()> {
        for c in comments {
            writeln!(w, "# {c}")?;
        }
        let p = self.filter_means.cols();
        let mut header = vec!["n".to_string(), "cond_loglik".to_string()];
        header.extend((1..=p).map(|i| format!("theta_bar_{i}")));
        header.extend((1..=p).map(|i| format!("V_{i}")));
        writeln!(w, "{}", header.join(","))?;
        for (k, c) in self.cond_loglik.iter().enumerate() {
            let mut line = format!("{},{}", k + 1, fmt_f64(*c));
            if p > 0 {
                for v in self.filter_means.row(k).iter().chain(self.pred_variances.row(k)) {
                    line.push(',');
                    line.push_str(&fmt_f64(*v));
                }
            }
            writeln!(w, "{line}")?;
        }
        Ok(())
    }
}

/// Output of a perturbed pass: the filter result plus the parameter swarm.
#[derive(Debug, Clone)]
pub struct PerturbedFilterResult {
    pub filter: FilterResult,
    /// `J x p` filtered swarm at time `N` (estimation scale).
    pub final_swarm: RowMatrix,
    /// Unweighted swarm mean at time `L` (estimation scale), used for IVPs.
    pub lag_swarm_mean: Vec<f64>,
}

/// Bootstrap particle filter log-likelihood estimate at fixed `theta`.
pub fn pfilter(
    model: &ModelSpec,
    theta: &ParamVector,
    data: &TimeSeriesData,
    j: usize,
    rng: &RngStream,
    opts: &FilterOptions,
) -> Result<FilterResult> {
    let out = engine::run_pass(model, data, j, &Params::Fixed(theta.values()), &Tracking::default(), opts, rng)?;
    Ok(FilterResult::from_pass(&out, j))
}

/// Particle filter with parameters perturbed as a random walk (iteration `m`,
/// 1-based). `theta_center` is on the natural scale; swarm statistics are
/// reported on the model's estimation scale.
#[allow(clippy::too_many_arguments)]
pub fn pfilter_perturbed(
    model: &ModelSpec,
    theta_center: &ParamVector,
    pert: &PerturbationSpec,
    m: usize,
    data: &TimeSeriesData,
    j: usize,
    rng: &RngStream,
    opts: &FilterOptions,
) -> Result<PerturbedFilterResult> {
    if m == 0 {
        return Err(PompError::InvalidArgument("iteration index m starts at 1".into()));
    }
    pert.validate(model.n_params())?;
    let center = model.to_estimation(theta_center.values());
    let params = Params::Perturbed(Perturbation {
        init: SwarmInit::Draw {
            center,
            sd: pert.init_sd(m),
        },
        walk: Walk::Random { sd: pert.walk_sd(m) },
        transforms: model.transforms.clone(),
        ivp: pert.ivp_mask(model.n_params()),
    });
    let track = Tracking {
        lag: pert.lag,
        keep_final_swarm: true,
        ..Default::default()
    };
    let out = engine::run_pass(model, data, j, &params, &track, opts, rng)?;
    Ok(perturbed_result(&out, j))
}

pub(crate) fn perturbed_result(out: &engine::PassOutput, j: usize) -> PerturbedFilterResult {
    PerturbedFilterResult {
        filter: FilterResult::from_pass(out, j),
        final_swarm: if out.final_swarm.is_empty() {
            RowMatrix::empty()
        } else {
            RowMatrix::new(j, out.n_params, out.final_swarm.clone())
        },
        lag_swarm_mean: out.lag_swarm_mean.clone(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::PompModel;
    use crate::rng::SimRng;
    use rand_distr::{Distribution, StandardNormal};
    use std::sync::Arc;

    /// Scalar random walk state with a flat measurement density.
    struct Flat;
    impl PompModel for Flat {
        fn rinit(&self, _: &[f64], _: &mut SimRng, x0: &mut [f64]) {
            x0[0] = 0.0;
        }
        fn rprocess(&self, x: &mut [f64], _: &[f64], _: f64, _: f64, rng: &mut SimRng) {
            let z: f64 = StandardNormal.sample(rng);
            x[0] += z;
        }
        fn dmeasure(&self, _: &[f64], _: &[f64], _: &[f64], _: f64) -> f64 {
            0.0
        }
    }

    struct Impossible;
    impl PompModel for Impossible {
        fn rinit(&self, _: &[f64], _: &mut SimRng, x0: &mut [f64]) {
            x0[0] = 0.0;
        }
        fn rprocess(&self, _: &mut [f64], _: &[f64], _: f64, _: f64, _: &mut SimRng) {}
        fn dmeasure(&self, y: &[f64], _: &[f64], _: &[f64], _: f64) -> f64 {
            if y[0] > 0.0 {
                f64::NEG_INFINITY
            } else {
                -1.0
            }
        }
    }

    struct NanMeasure;
    impl PompModel for NanMeasure {
        fn rinit(&self, _: &[f64], _: &mut SimRng, x0: &mut [f64]) {
            x0[0] = 0.0;
        }
        fn rprocess(&self, _: &mut [f64], _: &[f64], _: f64, _: f64, _: &mut SimRng) {}
        fn dmeasure(&self, _: &[f64], _: &[f64], _: &[f64], _: f64) -> f64 {
            f64::NAN
        }
    }

    fn setup(h: Arc<dyn PompModel>, ys: &[f64]) -> (ModelSpec, TimeSeriesData, ParamVector) {
        let times: Vec<f64> = (1..=ys.len()).map(|k| k as f64).collect();
        let m = ModelSpec::new("t", 1, 1, vec!["a".into()], vec![], 0.0, times.clone(), h).unwrap();
        let d = TimeSeriesData::new(times, 1, ys.to_vec()).unwrap();
        let th = m.params(&[("a", 0.0)]).unwrap();
        (m, d, th)
    }

    #[test]
    fn constant_density_gives_zero_loglik() {
        let (m, d, th) = setup(Arc::new(Flat), &[1.0, 2.0, 3.0]);
        let r = pfilter(&m, &th, &d, 1, &RngStream::new(1), &FilterOptions::default()).unwrap();
        assert_eq!(r.loglik, 0.0);
        assert_eq!(r.cond_loglik, vec![0.0; 3]);
    }

    #[test]
    fn zero_weight_fallback_and_limit() {
        let (m, d, th) = setup(Arc::new(Impossible), &[-1.0, 1.0, -1.0, 1.0]);
        let r = pfilter(&m, &th, &d, 10, &RngStream::new(1), &FilterOptions::default()).unwrap();
        assert_eq!(r.n_failures, 2);
        assert_eq!(r.cond_loglik, vec![-1.0, FAILURE_LOGLIK, -1.0, FAILURE_LOGLIK]);
        let opts = FilterOptions {
            max_fail: Some(1),
            ..Default::default()
        };
        assert!(matches!(
            pfilter(&m, &th, &d, 10, &RngStream::new(1), &opts),
            Err(PompError::FilteringLimitExceeded { failures: 2, max_fail: 1 })
        ));
    }

    #[test]
    fn nan_density_is_a_contract_error() {
        let (m, d, th) = setup(Arc::new(NanMeasure), &[0.0]);
        assert!(matches!(
            pfilter(&m, &th, &d, 4, &RngStream::new(1), &FilterOptions::default()),
            Err(PompError::ModelContract(_))
        ));
    }

    #[test]
    fn zero_particles_rejected() {
        let (m, d, th) = setup(Arc::new(Flat), &[0.0]);
        assert!(pfilter(&m, &th, &d, 0, &RngStream::new(1), &FilterOptions::default()).is_err());
    }

    #[test]
    fn random_walk_variance_accumulates() {
        // With a flat density there is no selection, so the prediction variance
        // follows (a^{m-1} s)^2 n + (C a^{m-1} s)^2.
        let ys = vec![0.0; 20];
        let (m, d, th) = setup(Arc::new(Flat), &ys);
        let (s, a, c, iter) = (0.3, 0.9, 2.0, 3);
        let pert = PerturbationSpec::for_model(&m, &[("a", s)], a, c).unwrap();
        let r = pfilter_perturbed(&m, &th, &pert, iter, &d, 20_000, &RngStream::new(9), &FilterOptions::default())
            .unwrap();
        let walk = a.powi(iter as i32 - 1) * s;
        for n in 1..=20 {
            let expect = walk * walk * n as f64 + (c * walk).powi(2);
            let got = r.filter.pred_variances.get(n - 1, 0);
            // Resampling adds noise; 20000 particles keep the relative error small.
            assert!((got / expect - 1.0).abs() < 0.1, "n={n}: {got} vs {expect}");
        }
    }

    #[test]
    fn zero_perturbation_matches_pfilter() {
        let ys: Vec<f64> = (0..15).map(|k| (k as f64).sin()).collect();
        let (m, d, th) = setup(Arc::new(Flat), &ys);
        let pert = PerturbationSpec::for_model(&m, &[("a", 0.0)], 0.5, 0.0).unwrap();
        let rng = RngStream::new(4);
        let a = pfilter(&m, &th, &d, 50, &rng, &FilterOptions::default()).unwrap();
        let b = pfilter_perturbed(&m, &th, &pert, 1, &d, 50, &rng, &FilterOptions::default()).unwrap();
        assert_eq!(a.loglik, b.filter.loglik);
        assert_eq!(a.state_means, b.filter.state_means);
        assert!(b.filter.filter_means.iter_rows().all(|r| r == [0.0]));
    }
}
