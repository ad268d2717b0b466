use super::{if1_increment, random_walk_pass, tracking, update_ivps, IteratedOptions, Iterate, OptimizerTrace};
use crate::error::{PompError, Result};
use crate::model::{ModelSpec, ParamVector, TimeSeriesData};
use crate::rng::RngStream;
use crate::table::RowMatrix;

/// Momentum iterated filtering: the IF1 increment `Delta_m` feeds a velocity
/// `v_m = gamma v_{m-1} + Delta_m` and `theta_m = theta_{m-1} + v_m`. With
/// `gamma = 0` this is exactly [`if1`](super::if1).
pub fn momentum_mif(
    model: &ModelSpec,
    theta0: &ParamVector,
    data: &TimeSeriesData,
    opts: &IteratedOptions,
    gamma: f64,
    rng: &RngStream,
) -> Result<OptimizerTrace> {
    if !(0.0..1.0).contains(&gamma) {
        return Err(PompError::InvalidArgument(format!("momentum gamma must lie in [0, 1), got {gamma}")));
    }
    momentum_core("momentum", model, theta0, data, opts, gamma, rng)
}

pub(super) fn momentum_core(
    name: &str,
    model: &ModelSpec,
    theta0: &ParamVector,
    data: &TimeSeriesData,
    opts: &IteratedOptions,
    gamma: f64,
    rng: &RngStream,
) -> Result<OptimizerTrace> {
    opts.validate(model, theta0, data)?;
    let pert = &opts.pert;
    let active = pert.active();
    let mut it = Iterate::new(model, theta0)?;
    let mut velocity = vec![0.0; model.n_params()];
    let mut trace = OptimizerTrace::new(name, model, theta0);
    let mut vel_rows = RowMatrix::empty();
    for m in 1..=opts.iterations {
        let prev = it.est.clone();
        let out = random_walk_pass(model, data, opts, &prev, m, tracking(pert.lag), rng)?;
        let delta = if1_increment(&out, &prev, &active);
        for &i in &active {
            velocity[i] = gamma * velocity[i] + delta[i];
            it.set(i, prev[i] + velocity[i]);
        }
        update_ivps(&mut it, pert, &out);
        it.check_finite(m)?;
        trace.push(&it, &prev, &out, false);
        vel_rows.push_row(&velocity);
    }
    if gamma != 0.0 {
        trace.aux.push(("velocity".into(), vel_rows));
    }
    Ok(trace)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optimizers::if1;
    use crate::optimizers::testing::{setup, Flat, IidMean};
    use crate::perturb::PerturbationSpec;
    use std::sync::Arc;

    #[test]
    fn gamma_zero_is_if1() {
        let (m, d) = setup(Arc::new(IidMean), 40, 5);
        let th = m.params(&[("theta", -0.5)]).unwrap();
        let pert = PerturbationSpec::for_model(&m, &[("theta", 0.1)], 0.9, 1.0).unwrap();
        let opts = IteratedOptions::new(6, 200, pert);
        let a = if1(&m, &th, &d, &opts, &RngStream::new(7)).unwrap();
        let b = momentum_mif(&m, &th, &d, &opts, 0.0, &RngStream::new(7)).unwrap();
        assert_eq!(a.theta, b.theta);
        assert_eq!(a.loglik, b.loglik);
    }

    #[test]
    fn flat_likelihood_with_momentum_stays_centered() {
        let (m, d) = setup(Arc::new(Flat), 10, 6);
        let th = m.params(&[("theta", 0.0)]).unwrap();
        let pert = PerturbationSpec::for_model(&m, &[("theta", 0.05)], 0.9, 1.0).unwrap();
        let opts = IteratedOptions::new(5, 50, pert);
        let finals: Vec<(f64, f64)> = (0..200)
            .map(|s| {
                let tr = momentum_mif(&m, &th, &d, &opts, 0.9, &RngStream::new(s)).unwrap();
                let vmax = tr.aux[0].1.column(0).iter().fold(0.0f64, |a, v| a.max(v.abs()));
                (tr.estimate().values()[0], vmax)
            })
            .collect();
        let mean = finals.iter().map(|f| f.0).sum::<f64>() / 200.0;
        let sd = (finals.iter().map(|f| (f.0 - mean).powi(2)).sum::<f64>() / 199.0).sqrt();
        assert!(mean.abs() < 3.0 * sd / 200f64.sqrt(), "mean {mean}, sd {sd}");
        assert!(finals.iter().all(|f| f.1 < 10.0));
    }

    #[test]
    fn rejects_gamma_one() {
        let (m, d) = setup(Arc::new(Flat), 5, 1);
        let th = m.params(&[("theta", 0.0)]).unwrap();
        let pert = PerturbationSpec::for_model(&m, &[("theta", 0.05)], 0.9, 1.0).unwrap();
        assert!(momentum_mif(&m, &th, &d, &IteratedOptions::new(1, 10, pert), 1.0, &RngStream::new(1)).is_err());
    }
}
