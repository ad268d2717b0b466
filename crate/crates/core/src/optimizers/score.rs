//! Score estimates from perturbed-parameter swarm statistics.

use super::{perturbation, run, IteratedOptions};
use crate::engine::{SwarmInit, Tracking, Walk};
use crate::error::{PompError, Result};
use crate::model::{ModelSpec, ParamVector, TimeSeriesData};
use crate::rng::RngStream;
use crate::table::RowMatrix;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreMode {
    /// Uses the time-0 row only.
    Theorem1,
    /// Averages all `N + 1` rows.
    #[default]
    Theorem2,
}

/// Score estimate `scale^-2 Psi^-1 (mean_bar - center)`.
///
/// `means` has `N + 1` rows; row `n` is the (smoothed) mean of the perturbed
/// parameters at time `n`. `psi` is the diagonal of `Psi`. Only `active`
/// coordinates are estimated; the rest are returned as 0.
pub fn score_estimate(
    means: &RowMatrix,
    center: &[f64],
    psi: &[f64],
    active: &[usize],
    scale: f64,
    mode: ScoreMode,
) -> Result<Vec<f64>> {
    let p = center.len();
    if means.cols() != p || psi.len() != p || means.is_empty() {
        return Err(PompError::InvalidArgument("score inputs have inconsistent dimensions".into()));
    }
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(PompError::InvalidArgument(format!("score scale must be positive, got {scale}")));
    }
    if let Some(&i) = active.iter().find(|&&i| i >= p || !(psi[i] > 0.0 && psi[i].is_finite())) {
        return Err(PompError::Numerical(format!("Psi is singular in coordinate {i}")));
    }
    let rows: Vec<usize> = match mode {
        ScoreMode::Theorem1 => vec![0],
        ScoreMode::Theorem2 => (0..means.rows()).collect(),
    };
    let mut s = vec![0.0; p];
    for &i in active {
        let dev: f64 = rows.iter().map(|&n| means.get(n, i) - center[i]).sum::<f64>() / rows.len() as f64;
        s[i] = dev / (scale * scale * psi[i]);
    }
    Ok(s)
}

/// Score at `theta` from one perturbed smoothing pass.
///
/// The time-0 swarm has sd `C sigma` and the walk sd `sigma`
/// (`opts.pert` at iteration 1); `Psi` is the time-0 covariance
/// `diag((C sigma)^2)` and the scale is 1. Returns the estimation-scale score.
pub fn score_at(
    model: &ModelSpec,
    theta: &ParamVector,
    data: &TimeSeriesData,
    opts: &IteratedOptions,
    mode: ScoreMode,
    rng: &RngStream,
) -> Result<Vec<f64>> {
    opts.validate(model, theta, data)?;
    let pert = &opts.pert;
    let center = model.to_estimation(theta.values());
    let pp = perturbation(
        model,
        pert,
        SwarmInit::Draw {
            center: center.clone(),
            sd: pert.init_sd(1),
        },
        Walk::Random { sd: pert.walk_sd(1) },
    );
    let track = Tracking {
        lag: pert.lag,
        smooth_params: true,
        ..Default::default()
    };
    let out = run(model, data, opts, pp, track, rng)?;
    let means = RowMatrix::new(out.n_steps + 1, out.n_params, out.smoothed_means);
    let psi: Vec<f64> = pert.init_sd(1).iter().map(|s| s * s).collect();
    score_estimate(&means, &center, &psi, &pert.active(), 1.0, mode)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn centered_swarm_gives_zero() {
        let means = RowMatrix::from_rows(&vec![vec![1.0, 2.0]; 5]);
        let s = score_estimate(&means, &[1.0, 2.0], &[0.1, 0.2], &[0, 1], 0.5, ScoreMode::Theorem2).unwrap();
        assert_eq!(s, vec![0.0, 0.0]);
    }

    #[test]
    fn linear_in_psi_inverse() {
        let means = RowMatrix::from_rows(&[vec![0.3, 1.0], vec![0.1, 2.0], vec![0.2, 0.5]]);
        let a = score_estimate(&means, &[0.0, 1.0], &[0.1, 0.4], &[0, 1], 0.2, ScoreMode::Theorem2).unwrap();
        let b = score_estimate(&means, &[0.0, 1.0], &[0.2, 0.8], &[0, 1], 0.2, ScoreMode::Theorem2).unwrap();
        for i in 0..2 {
            assert_eq!(a[i], 2.0 * b[i]);
        }
        let t1 = score_estimate(&means, &[0.0, 1.0], &[0.1, 0.4], &[0], 1.0, ScoreMode::Theorem1).unwrap();
        assert!((t1[0] - 3.0).abs() < 1e-12);
        assert_eq!(t1[1], 0.0);
    }

    #[test]
    fn singular_psi_rejected() {
        let means = RowMatrix::from_rows(&[vec![0.0]]);
        assert!(score_estimate(&means, &[0.0], &[0.0], &[0], 1.0, ScoreMode::Theorem2).is_err());
    }
}
