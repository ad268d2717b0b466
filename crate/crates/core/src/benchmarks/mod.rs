//! Benchmark models with exact likelihood oracles.

pub mod gompertz;
pub mod kalman;
pub mod ou2;

pub use gompertz::{gompertz_exact_loglik, gompertz_model, GompertzParams};
pub use kalman::{KalmanOutput, LinearGaussian};
pub use ou2::{ou2_kalman_loglik, ou2_model, ou2_oracle_mle, Ou2Kalman, Ou2OracleMle, Ou2Params};
