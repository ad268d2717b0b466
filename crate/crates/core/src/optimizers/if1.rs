use super::momentum::momentum_core;
use super::{IteratedOptions, OptimizerTrace};
use crate::error::Result;
use crate::model::{ModelSpec, ParamVector, TimeSeriesData};
use crate::rng::RngStream;

/// Classical iterated filtering. Each iteration runs a random-walk
/// perturbed filter centered at `theta_{m-1}` and moves each perturbed
/// coordinate by `V_1 sum_n V_n^{-1} (theta_bar_n - theta_bar_{n-1})`,
/// with `theta_bar_0 = theta_{m-1}`. IVPs move to the time-`L` swarm mean.
pub fn if1(
    model: &ModelSpec,
    theta0: &ParamVector,
    data: &TimeSeriesData,
    opts: &IteratedOptions,
    rng: &RngStream,
) -> Result<OptimizerTrace> {
    momentum_core("if1", model, theta0, data, opts, 0.0, rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optimizers::testing::{setup, Flat, IidMean};
    use crate::perturb::PerturbationSpec;
    use std::sync::Arc;

    #[test]
    fn zero_perturbation_is_a_fixed_point() {
        let (m, d) = setup(Arc::new(IidMean), 30, 1);
        let th = m.params(&[("theta", 0.123)]).unwrap();
        let pert = PerturbationSpec::for_model(&m, &[("theta", 0.0)], 0.9, 0.0).unwrap();
        let tr = if1(&m, &th, &d, &IteratedOptions::new(5, 50, pert), &RngStream::new(1)).unwrap();
        assert_eq!(tr.estimate().values(), &[0.123]);
        assert_eq!(tr.iterations(), 5);
    }

    #[test]
    fn moves_toward_the_mle() {
        let (m, d) = setup(Arc::new(IidMean), 100, 2);
        let mle = d.values().iter().sum::<f64>() / 100.0;
        let th = m.params(&[("theta", mle - 1.0)]).unwrap();
        let pert = PerturbationSpec::for_model(&m, &[("theta", 0.1)], 0.95, 1.0).unwrap();
        let tr = if1(&m, &th, &d, &IteratedOptions::new(30, 500, pert), &RngStream::new(3)).unwrap();
        let est = tr.estimate().values()[0];
        assert!((est - mle).abs() < 0.2, "estimate {est}, mle {mle}");
    }

    #[test]
    fn flat_likelihood_update_is_unbiased() {
        let (m, d) = setup(Arc::new(Flat), 20, 4);
        let th = m.params(&[("theta", 0.0)]).unwrap();
        let pert = PerturbationSpec::for_model(&m, &[("theta", 0.1)], 0.9, 1.0).unwrap();
        let opts = IteratedOptions::new(1, 100, pert);
        let steps: Vec<f64> = (0..200)
            .map(|s| if1(&m, &th, &d, &opts, &RngStream::new(s)).unwrap().estimate().values()[0])
            .collect();
        let mean = steps.iter().sum::<f64>() / 200.0;
        let sd = (steps.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 199.0).sqrt();
        assert!(mean.abs() < 3.0 * sd / 200f64.sqrt(), "mean {mean}, sd {sd}");
    }
}
