use super::{random_walk_pass, update_ivps, IteratedOptions, Iterate, OptimizerTrace};
use crate::engine::Tracking;
use crate::error::{PompError, Result};
use crate::model::{ModelSpec, ParamVector, TimeSeriesData};
use crate::rng::RngStream;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct AvifOptions {
    /// Filter means at times `n <= k_start` are left out of the average.
    pub k_start: usize,
    /// Use `theta_{m-1} + (theta_bar_N - theta_bar_{k_start}) / (N - k_start)`
    /// instead of the mean of the filter means.
    #[serde(default)]
    pub telescoped: bool,
}

/// Averaged iterated filtering: `theta_m` is the mean of the per-step
/// parameter means over `n > k_start`. With `pert.lag = L > 0` the lag-`L`
/// smoothed means replace the filter means.
pub fn avif(
    model: &ModelSpec,
    theta0: &ParamVector,
    data: &TimeSeriesData,
    opts: &IteratedOptions,
    avg: &AvifOptions,
    rng: &RngStream,
) -> Result<OptimizerTrace> {
    opts.validate(model, theta0, data)?;
    let n = data.len();
    if avg.k_start >= n {
        return Err(PompError::InvalidArgument(format!(
            "k_start must satisfy 0 <= k_start < N (k_start = {}, N = {n})",
            avg.k_start
        )));
    }
    let pert = &opts.pert;
    let p = model.n_params();
    let active = pert.active();
    let mut it = Iterate::new(model, theta0)?;
    let mut trace = OptimizerTrace::new("avif", model, theta0);
    let lag = pert.lag;
    for m in 1..=opts.iterations {
        let prev = it.est.clone();
        let track = Tracking {
            lag,
            smooth_params: lag > 0,
            ..Default::default()
        };
        let out = random_walk_pass(model, data, opts, &prev, m, track, rng)?;
        // Row for time k (1..=N) of the per-step means.
        let mean_at = |k: usize, i: usize| {
            if lag > 0 {
                out.smoothed_means[k * p + i]
            } else {
                out.filter_means[(k - 1) * p + i]
            }
        };
        for &i in &active {
            let v = if avg.telescoped {
                let start = if avg.k_start == 0 { prev[i] } else { mean_at(avg.k_start, i) };
                prev[i] + (mean_at(n, i) - start) / (n - avg.k_start) as f64
            } else {
                ((avg.k_start + 1)..=n).map(|k| mean_at(k, i)).sum::<f64>() / (n - avg.k_start) as f64
            };
            it.set(i, v);
        }
        update_ivps(&mut it, pert, &out);
        it.check_finite(m)?;
        trace.push(&it, &prev, &out, false);
    }
    Ok(trace)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optimizers::testing::{setup, IidMean};
    use crate::optimizers::{random_walk_pass, tracking};
    use crate::perturb::PerturbationSpec;
    use std::sync::Arc;

    #[test]
    fn zero_perturbation_is_a_fixed_point() {
        let (m, d) = setup(Arc::new(IidMean), 20, 1);
        let th = m.params(&[("theta", 0.3)]).unwrap();
        let pert = PerturbationSpec::for_model(&m, &[("theta", 0.0)], 0.9, 0.0).unwrap();
        let opts = IteratedOptions::new(3, 40, pert);
        let tr = avif(&m, &th, &d, &opts, &AvifOptions::default(), &RngStream::new(1)).unwrap();
        assert_eq!(tr.estimate().values(), &[0.3]);
    }

    #[test]
    fn window_of_one_takes_the_last_filter_mean() {
        let (m, d) = setup(Arc::new(IidMean), 15, 1);
        let th = m.params(&[("theta", 0.3)]).unwrap();
        let pert = PerturbationSpec::for_model(&m, &[("theta", 0.1)], 0.9, 1.0).unwrap();
        let opts = IteratedOptions::new(1, 100, pert);
        let avg = AvifOptions {
            k_start: 14,
            telescoped: false,
        };
        let tr = avif(&m, &th, &d, &opts, &avg, &RngStream::new(2)).unwrap();
        let out = random_walk_pass(&m, &d, &opts, &[0.3], 1, tracking(0), &RngStream::new(2)).unwrap();
        assert_eq!(tr.estimate().values()[0], out.filter_means[14]);
    }

    #[test]
    fn k_start_must_be_inside_the_series() {
        let (m, d) = setup(Arc::new(IidMean), 5, 1);
        let th = m.params(&[("theta", 0.3)]).unwrap();
        let pert = PerturbationSpec::for_model(&m, &[("theta", 0.1)], 0.9, 1.0).unwrap();
        let avg = AvifOptions {
            k_start: 5,
            telescoped: false,
        };
        assert!(avif(&m, &th, &d, &IteratedOptions::new(1, 10, pert), &avg, &RngStream::new(1)).is_err());
    }
}
