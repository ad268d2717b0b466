//! Two-dimensional linear-Gaussian autoregression.
//!
//! `x1' = a1 x1 + a2 x2 + s1 e1`, `x2' = a3 x1 + a4 x2 + s2 e1 + s3 e2`,
//! `y = x + tau * v`. The shared `e1` makes `[[s1, 0], [s2, s3]]` a
//! lower-triangular noise factor.

use super::kalman::{KalmanOutput, LinearGaussian};
use crate::error::{PompError, Result};
use crate::model::{ModelSpec, ParamVector, PompModel, TimeSeriesData};
use crate::rng::SimRng;
use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::sync::Arc;

pub const OU2_PARAM_NAMES: [&str; 10] = [
    "alpha_1", "alpha_2", "alpha_3", "alpha_4", "sigma_1", "sigma_2", "sigma_3", "tau", "x1_0", "x2_0",
];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ou2Params {
    pub alpha: [f64; 4],
    pub sigma: [f64; 3],
    pub tau: f64,
    pub x0: [f64; 2],
}

impl Default for Ou2Params {
    /// The values the benchmark data are simulated from.
    fn default() -> Self {
        Ou2Params {
            alpha: [0.8, -0.5, 0.3, 0.9],
            sigma: [3.0, -0.5, 2.0],
            tau: 1.0,
            x0: [-3.0, 4.0],
        }
    }
}

impl Ou2Params {
    /// Values in [`OU2_PARAM_NAMES`] order.
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = self.alpha.to_vec();
        v.extend_from_slice(&self.sigma);
        v.push(self.tau);
        v.extend_from_slice(&self.x0);
        v
    }

    pub fn from_slice(v: &[f64]) -> Result<Self> {
        if v.len() != 10 {
            return Err(PompError::InvalidArgument(format!("ou2 has 10 parameters, got {}", v.len())));
        }
        Ok(Ou2Params {
            alpha: [v[0], v[1], v[2], v[3]],
            sigma: [v[4], v[5], v[6]],
            tau: v[7],
            x0: [v[8], v[9]],
        })
    }

    /// Look parameters up by name, in any order.
    pub fn from_named(theta: &ParamVector) -> Result<Self> {
        let mut v = [0.0; 10];
        for (k, name) in OU2_PARAM_NAMES.iter().enumerate() {
            v[k] = theta
                .get(name)
                .ok_or_else(|| PompError::InvalidArgument(format!("missing ou2 parameter `{name}`")))?;
        }
        Self::from_slice(&v)
    }

    pub fn to_param_vector(&self) -> ParamVector {
        ParamVector::new(OU2_PARAM_NAMES.iter().map(|s| s.to_string()).collect(), self.to_vec())
            .expect("finite ou2 parameters")
    }

    pub fn linear_gaussian(&self) -> LinearGaussian {
        let [a1, a2, a3, a4] = self.alpha;
        let [s1, s2, s3] = self.sigma;
        let f = DMatrix::from_row_slice(2, 2, &[s1, 0.0, s2, s3]);
        LinearGaussian {
            a: DMatrix::from_row_slice(2, 2, &[a1, a2, a3, a4]),
            c: DVector::zeros(2),
            q: &f * f.transpose(),
            h: DMatrix::identity(2, 2),
            d: DVector::zeros(2),
            r: DMatrix::identity(2, 2) * (self.tau * self.tau),
            m0: DVector::from_column_slice(&self.x0),
            p0: DMatrix::zeros(2, 2),
        }
    }
}

/// One transition with the two noise draws supplied.
pub fn ou2_step(x: &[f64], theta: &[f64], xi: [f64; 2]) -> [f64; 2] {
    [
        theta[0] * x[0] + theta[1] * x[1] + theta[4] * xi[0],
        theta[2] * x[0] + theta[3] * x[1] + theta[5] * xi[0] + theta[6] * xi[1],
    ]
}

fn normal_logpdf(y: f64, mean: f64, sd: f64) -> f64 {
    if sd == 0.0 {
        return if y == mean { 0.0 } else { f64::NEG_INFINITY };
    }
    let z = (y - mean) / sd;
    -0.5 * (2.0 * PI).ln() - sd.abs().ln() - 0.5 * z * z
}

#[derive(Debug, Default)]
pub struct Ou2;

impl PompModel for Ou2 {
    fn rinit(&self, theta: &[f64], _: &mut SimRng, x0: &mut [f64]) {
        x0.copy_from_slice(&theta[8..10]);
    }

    fn rprocess(&self, x: &mut [f64], theta: &[f64], _: f64, _: f64, rng: &mut SimRng) {
        let xi = [StandardNormal.sample(rng), StandardNormal.sample(rng)];
        let next = ou2_step(x, theta, xi);
        x.copy_from_slice(&next);
    }

    fn dmeasure(&self, y: &[f64], x: &[f64], theta: &[f64], _: f64) -> f64 {
        normal_logpdf(y[0], x[0], theta[7]) + normal_logpdf(y[1], x[1], theta[7])
    }

    fn rmeasure(&self, x: &[f64], theta: &[f64], _: f64, rng: &mut SimRng, y: &mut [f64]) -> Result<()> {
        for k in 0..2 {
            let z: f64 = StandardNormal.sample(rng);
            y[k] = x[k] + theta[7] * z;
        }
        Ok(())
    }
}

/// The ou2 model observed at times `1..=n`.
pub fn ou2_model_with_len(n: usize) -> ModelSpec {
    ModelSpec::new(
        "ou2",
        2,
        2,
        OU2_PARAM_NAMES.iter().map(|s| s.to_string()).collect(),
        vec![8, 9],
        0.0,
        (1..=n).map(|k| k as f64).collect(),
        Arc::new(Ou2),
    )
    .expect("valid ou2 model")
}

/// The ou2 model with 100 unit-spaced observation times.
pub fn ou2_model() -> ModelSpec {
    ou2_model_with_len(100)
}

/// Exact Kalman results for ou2.
#[derive(Debug, Clone)]
pub struct Ou2Kalman {
    pub loglik: f64,
    /// `N x 2` rows.
    pub filter_means: Vec<[f64; 2]>,
    pub smoother_means: Vec<[f64; 2]>,
    pub full: KalmanOutput,
}

pub fn ou2_kalman_loglik(theta: &Ou2Params, data: &TimeSeriesData) -> Result<Ou2Kalman> {
    if data.dim_obs() != 2 {
        return Err(PompError::InvalidData("ou2 data must have 2 columns".into()));
    }
    if !(theta.tau >= 0.0) {
        return Err(PompError::InvalidArgument("tau must be nonnegative".into()));
    }
    let ys: Vec<Vec<f64>> = (0..data.len()).map(|n| data.row(n).to_vec()).collect();
    let out = theta.linear_gaussian().run(&ys)?;
    let two = |v: &DVector<f64>| [v[0], v[1]];
    Ok(Ou2Kalman {
        loglik: out.loglik,
        filter_means: out.filter_means.iter().map(two).collect(),
        smoother_means: out.smoother_means.iter().map(two).collect(),
        full: out,
    })
}

/// Maximizer of the exact log-likelihood over `(alpha_2, alpha_3)` with the
/// other parameters held at `base`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ou2OracleMle {
    pub alpha_2: f64,
    pub alpha_3: f64,
    pub loglik: f64,
}

/// Grid search over `(alpha_2, alpha_3)`, refined by factors of 10 down to a
/// spacing of `1e-4`. Points with an unstable transition matrix are skipped.
pub fn ou2_oracle_mle(base: &Ou2Params, data: &TimeSeriesData) -> Result<Ou2OracleMle> {
    let eval = |a2: f64, a3: f64| -> f64 {
        let mut th = *base;
        th.alpha[1] = a2;
        th.alpha[2] = a3;
        ou2_kalman_loglik(&th, data).map(|k| k.loglik).unwrap_or(f64::NEG_INFINITY)
    };
    let mut best = (base.alpha[1], base.alpha[2], eval(base.alpha[1], base.alpha[2]));
    let consider = |a2: f64, a3: f64, best: &mut (f64, f64, f64)| {
        let v = eval(a2, a3);
        if v > best.2 {
            *best = (a2, a3, v);
        }
    };
    let (mut h, mut half) = (0.05, 30);
    let (c2, c3) = (base.alpha[1], base.alpha[2]);
    for i in -half..=half {
        for k in -half..=half {
            consider(c2 + i as f64 * h, c3 + k as f64 * h, &mut best);
        }
    }
    half = 10;
    while h > 1e-4 {
        h /= 10.0;
        let (c2, c3) = (best.0, best.1);
        for i in -half..=half {
            for k in -half..=half {
                consider(c2 + i as f64 * h, c3 + k as f64 * h, &mut best);
            }
        }
    }
    if !best.2.is_finite() {
        return Err(PompError::Numerical("oracle log-likelihood is not finite".into()));
    }
    Ok(Ou2OracleMle {
        alpha_2: best.0,
        alpha_3: best.1,
        loglik: best.2,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_noise_step() {
        let th = Ou2Params::default().to_vec();
        let x = ou2_step(&[1.0, 1.0], &th, [0.0, 0.0]);
        assert!((x[0] - 0.3).abs() < 1e-15 && (x[1] - 1.2).abs() < 1e-15);
    }

    #[test]
    fn process_covariance_is_lower_triangular_factor_product() {
        let q = Ou2Params::default().linear_gaussian().q;
        assert_eq!(q[(0, 0)], 9.0);
        assert_eq!(q[(0, 1)], -1.5);
        assert_eq!(q[(1, 1)], 4.25);
    }

    #[test]
    fn single_standard_normal_observation() {
        let th = Ou2Params {
            alpha: [1.0, 0.0, 0.0, 1.0],
            sigma: [0.0; 3],
            tau: 1.0,
            x0: [0.0, 0.0],
        };
        let d = TimeSeriesData::new(vec![1.0], 2, vec![0.0, 0.0]).unwrap();
        let k = ou2_kalman_loglik(&th, &d).unwrap();
        assert!((k.loglik + (2.0 * PI).ln()).abs() < 1e-12);
    }

    #[test]
    fn named_lookup_ignores_order() {
        let th = Ou2Params::default();
        let mut names: Vec<String> = OU2_PARAM_NAMES.iter().map(|s| s.to_string()).collect();
        let mut vals = th.to_vec();
        names.reverse();
        vals.reverse();
        let pv = ParamVector::new(names, vals).unwrap();
        assert_eq!(Ou2Params::from_named(&pv).unwrap(), th);
    }
}
