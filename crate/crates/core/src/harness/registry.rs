use crate::benchmarks::gompertz::{gompertz_model, gompertz_exact_loglik, GompertzParams};
use crate::benchmarks::ou2::{ou2_kalman_loglik, ou2_model, ou2_oracle_mle, Ou2Params};
use crate::error::Result;
use crate::model::{ModelSpec, TimeSeriesData};
use std::collections::BTreeMap;

/// Exact log-likelihood at a natural-scale parameter vector.
pub type OracleFn = fn(&[f64], &TimeSeriesData) -> Result<f64>;

/// Maximizer of the exact log-likelihood over a model-specific subset of
/// parameters, starting from the given vector. Returns the full vector and
/// its log-likelihood.
pub type OracleMleFn = fn(&[f64], &TimeSeriesData) -> Result<(Vec<f64>, f64)>;

/// A model the harness can run by name.
#[derive(Clone)]
pub struct RegisteredModel {
    /// Template; its times are replaced by the data's.
    pub model: ModelSpec,
    /// Default (data-generating) parameters, natural scale.
    pub defaults: Vec<f64>,
    pub oracle: Option<OracleFn>,
    pub oracle_mle: Option<OracleMleFn>,
}

#[derive(Clone, Default)]
pub struct Registry {
    entries: BTreeMap<String, RegisteredModel>,
}

fn ou2_oracle(theta: &[f64], data: &TimeSeriesData) -> Result<f64> {
    Ok(ou2_kalman_loglik(&Ou2Params::from_slice(theta)?, data)?.loglik)
}

fn ou2_mle(theta: &[f64], data: &TimeSeriesData) -> Result<(Vec<f64>, f64)> {
    let mle = ou2_oracle_mle(&Ou2Params::from_slice(theta)?, data)?;
    let mut v = theta.to_vec();
    v[1] = mle.alpha_2;
    v[2] = mle.alpha_3;
    Ok((v, mle.loglik))
}

fn gompertz_oracle(theta: &[f64], data: &TimeSeriesData) -> Result<f64> {
    gompertz_exact_loglik(&GompertzParams::from_slice(theta)?, data)
}

impl Registry {
    /// `ou2` and `gompertz`.
    pub fn builtin() -> Self {
        let mut r = Registry::default();
        r.register(
            "ou2",
            RegisteredModel {
                model: ou2_model(),
                defaults: Ou2Params::default().to_vec(),
                oracle: Some(ou2_oracle),
                oracle_mle: Some(ou2_mle),
            },
        );
        r.register(
            "gompertz",
            RegisteredModel {
                model: gompertz_model(),
                defaults: GompertzParams::default().to_vec(),
                oracle: Some(gompertz_oracle),
                oracle_mle: None,
            },
        );
        r
    }

    pub fn register(&mut self, name: &str, entry: RegisteredModel) {
        self.entries.insert(name.to_string(), entry);
    }

    pub fn get(&self, name: &str) -> Option<&RegisteredModel> {
        self.entries.get(name)
    }

    pub fn names(&self) -> Vec<String> {
        self.entries.keys().cloned().collect()
    }
}
