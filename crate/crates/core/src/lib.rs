//! Plug-and-play inference for partially observed Markov process (POMP) models.
//!
//! Models are supplied as simulator and density hooks ([`PompModel`]); the
//! library provides particle filtering, fixed-lag smoothing, iterated
//! filtering optimizers, particle MCMC samplers, benchmark models with exact
//! likelihood oracles, and a config-driven experiment harness.

mod engine;
pub mod bayes;
pub mod benchmarks;
pub mod error;
pub mod filter;
pub mod harness;
pub mod model;
pub mod optimizers;
pub mod perturb;
pub mod resample;
pub mod rng;
pub mod smoother;
pub mod table;

pub use error::{PompError, Result};
pub use filter::{pfilter, pfilter_perturbed, FilterOptions, FilterResult};
pub use model::{ModelSpec, ParamTransform, ParamVector, PompModel, TimeSeriesData};
pub use perturb::PerturbationSpec;
pub use resample::Resampler;
pub use rng::{RngStream, SimRng};
pub use smoother::{psmooth, SmoothOptions, SmoothResult};
pub use table::RowMatrix;
