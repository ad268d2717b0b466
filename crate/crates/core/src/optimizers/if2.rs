use super::{perturbation, run, update_ivps, IteratedOptions, Iterate, OptimizerTrace};
use crate::engine::{column_mean, SwarmInit, Tracking, Walk};
use crate::error::Result;
use crate::model::{ModelSpec, ParamVector, TimeSeriesData};
use crate::rng::RngStream;

/// Iterated filtering with the parameter swarm carried between iterations.
///
/// Iteration 1 draws the swarm around `theta0` with sd `C sigma`; later
/// iterations start from the previous final swarm, re-jittering IVPs with sd
/// `C a^(m-1) sigma`. `theta_m` is the swarm mean (IVPs: time-`L` mean).
pub fn if2(
    model: &ModelSpec,
    theta0: &ParamVector,
    data: &TimeSeriesData,
    opts: &IteratedOptions,
    rng: &RngStream,
) -> Result<OptimizerTrace> {
    opts.validate(model, theta0, data)?;
    let pert = &opts.pert;
    let p = model.n_params();
    let active = pert.active();
    let ivp = pert.ivp_mask(p);
    let mut it = Iterate::new(model, theta0)?;
    let mut trace = OptimizerTrace::new("if2", model, theta0);
    let mut swarm: Option<Vec<f64>> = None;
    for m in 1..=opts.iterations {
        let prev = it.est.clone();
        let init = match swarm.take() {
            None => SwarmInit::Draw {
                center: prev.clone(),
                sd: pert.init_sd(m),
            },
            Some(sw) => SwarmInit::Given {
                swarm: sw,
                sd: pert
                    .init_sd(m)
                    .iter()
                    .zip(&ivp)
                    .map(|(s, &is_ivp)| if is_ivp { *s } else { 0.0 })
                    .collect(),
            },
        };
        let pp = perturbation(model, pert, init, Walk::Random { sd: pert.walk_sd(m) });
        let track = Tracking {
            lag: pert.lag,
            keep_final_swarm: true,
            ..Default::default()
        };
        let out = run(model, data, opts, pp, track, &rng.substream_index(m as u64))?;
        let mean = column_mean(&out.final_swarm, p);
        for &i in &active {
            it.set(i, mean[i]);
        }
        update_ivps(&mut it, pert, &out);
        it.check_finite(m)?;
        trace.push(&it, &prev, &out, false);
        swarm = Some(out.final_swarm);
    }
    Ok(trace)
}
