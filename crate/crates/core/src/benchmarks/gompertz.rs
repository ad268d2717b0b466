//! Stochastic Gompertz population model with log-normal measurement error.
//!
//! `X' = K^(1 - S) X^S eps` with `S = exp(-r dt)`, `log eps ~ N(0, sigma^2)`,
//! and `log Y ~ N(log X, tau^2)`.

use crate::error::{PompError, Result};
use crate::model::{ModelSpec, ParamTransform, ParamVector, PompModel, TimeSeriesData};
use crate::rng::SimRng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::sync::Arc;

pub const GOMPERTZ_PARAM_NAMES: [&str; 5] = ["r", "K", "sigma", "tau", "X_0"];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[allow(non_snake_case)]
pub struct GompertzParams {
    pub r: f64,
    pub K: f64,
    pub sigma: f64,
    pub tau: f64,
    pub X0: f64,
}

impl Default for GompertzParams {
    fn default() -> Self {
        GompertzParams {
            r: 0.1,
            K: 1.0,
            sigma: 0.1,
            tau: 0.1,
            X0: 1.0,
        }
    }
}

impl GompertzParams {
    pub fn to_vec(&self) -> Vec<f64> {
        vec![self.r, self.K, self.sigma, self.tau, self.X0]
    }

    pub fn from_slice(v: &[f64]) -> Result<Self> {
        if v.len() != 5 {
            return Err(PompError::InvalidArgument(format!("gompertz has 5 parameters, got {}", v.len())));
        }
        Ok(GompertzParams {
            r: v[0],
            K: v[1],
            sigma: v[2],
            tau: v[3],
            X0: v[4],
        })
    }

    pub fn from_named(theta: &ParamVector) -> Result<Self> {
        let mut v = [0.0; 5];
        for (k, name) in GOMPERTZ_PARAM_NAMES.iter().enumerate() {
            v[k] = theta
                .get(name)
                .ok_or_else(|| PompError::InvalidArgument(format!("missing gompertz parameter `{name}`")))?;
        }
        Self::from_slice(&v)
    }

    pub fn to_param_vector(&self) -> ParamVector {
        ParamVector::new(GOMPERTZ_PARAM_NAMES.iter().map(|s| s.to_string()).collect(), self.to_vec())
            .expect("finite gompertz parameters")
    }

    fn check(&self) -> Result<()> {
        if !(self.r > 0.0 && self.K > 0.0 && self.sigma >= 0.0 && self.tau >= 0.0 && self.X0 > 0.0) {
            return Err(PompError::InvalidArgument(format!("invalid gompertz parameters {self:?}")));
        }
        Ok(())
    }
}

/// One transition with the multiplicative noise `eps` supplied.
#[allow(non_snake_case)]
pub fn gompertz_step(x: f64, r: f64, K: f64, eps: f64, dt: f64) -> f64 {
    let s = (-r * dt).exp();
    K.powf(1.0 - s) * x.powf(s) * eps
}

#[derive(Debug, Default)]
pub struct Gompertz;

impl PompModel for Gompertz {
    fn rinit(&self, theta: &[f64], _: &mut SimRng, x0: &mut [f64]) {
        x0[0] = theta[4];
    }

    fn rprocess(&self, x: &mut [f64], theta: &[f64], t_start: f64, t_end: f64, rng: &mut SimRng) {
        let z: f64 = StandardNormal.sample(rng);
        x[0] = gompertz_step(x[0], theta[0], theta[1], (theta[2] * z).exp(), t_end - t_start);
    }

    fn dmeasure(&self, y: &[f64], x: &[f64], theta: &[f64], _: f64) -> f64 {
        if !(y[0] > 0.0 && x[0] > 0.0) {
            return f64::NEG_INFINITY;
        }
        let ly = y[0].ln();
        let tau = theta[3];
        if tau == 0.0 {
            return if ly == x[0].ln() { 0.0 } else { f64::NEG_INFINITY };
        }
        let z = (ly - x[0].ln()) / tau;
        -0.5 * (2.0 * PI).ln() - tau.ln() - 0.5 * z * z - ly
    }

    fn rmeasure(&self, x: &[f64], theta: &[f64], _: f64, rng: &mut SimRng, y: &mut [f64]) -> Result<()> {
        let z: f64 = StandardNormal.sample(rng);
        y[0] = x[0] * (theta[3] * z).exp();
        Ok(())
    }

    fn dprior(&self, theta: &[f64]) -> Option<f64> {
        // Independent uniform(0, 1) priors on r, sigma and tau.
        let inside = [theta[0], theta[2], theta[3]].iter().all(|v| *v > 0.0 && *v < 1.0);
        Some(if inside { 0.0 } else { f64::NEG_INFINITY })
    }
}

pub fn gompertz_model_with_len(n: usize) -> ModelSpec {
    ModelSpec::new(
        "gompertz",
        1,
        1,
        GOMPERTZ_PARAM_NAMES.iter().map(|s| s.to_string()).collect(),
        vec![4],
        0.0,
        (1..=n).map(|k| k as f64).collect(),
        Arc::new(Gompertz),
    )
    .and_then(|m| m.with_transforms(vec![ParamTransform::Log; 5]))
    .expect("valid gompertz model")
}

/// The Gompertz model with 100 unit-spaced observation times.
pub fn gompertz_model() -> ModelSpec {
    gompertz_model_with_len(100)
}

/// Exact log-likelihood from a scalar Kalman filter on `log Y`, plus the
/// Jacobian `-sum log y`. Time starts at 0.
pub fn gompertz_exact_loglik(theta: &GompertzParams, data: &TimeSeriesData) -> Result<f64> {
    theta.check()?;
    if data.dim_obs() != 1 {
        return Err(PompError::InvalidData("gompertz data must have 1 column".into()));
    }
    let mut m = theta.X0.ln();
    let mut p = 0.0;
    let mut t_prev = 0.0;
    let mut ll = 0.0;
    let lk = theta.K.ln();
    for (n, &t) in data.times().iter().enumerate() {
        let y = data.row(n)[0];
        if !(y > 0.0) {
            return Err(PompError::InvalidData(format!("nonpositive observation {y} at index {}", n + 1)));
        }
        let s = (-theta.r * (t - t_prev)).exp();
        m = (1.0 - s) * lk + s * m;
        p = s * s * p + theta.sigma * theta.sigma;
        let v = p + theta.tau * theta.tau;
        let ly = y.ln();
        let e = ly - m;
        ll += -0.5 * ((2.0 * PI * v).ln() + e * e / v) - ly;
        let k = p / v;
        m += k * e;
        p *= 1.0 - k;
        t_prev = t;
    }
    Ok(ll)
}
