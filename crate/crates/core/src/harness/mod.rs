//! Config-driven experiments: replicated runs of any command with CSV and
//! JSON artifacts, and a summary across runs.
//!
//! Replicate `r` of a run with base seed `s` uses the stream seeded with
//! `s ^ r`; its start point is drawn from the substream `start`.

pub mod config;
pub mod registry;
pub mod run;
pub mod summarize;

pub use config::{Command, ExperimentConfig, Overrides};
pub use registry::{RegisteredModel, Registry};
pub use run::{run, ReplicateRecord, RunSummary};
pub use summarize::{collect_runs, render, summarize, summarize_runs, write_report, Report};
