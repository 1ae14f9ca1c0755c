//! Experiment driver for the `pointattack` library: synthetic datasets on
//! disk, training, attack runs with per-sample reports, and parameter sweeps.

pub mod dataset;
mod error;
pub mod experiment;
pub mod sweep;

pub use dataset::{DatasetSpec, ManifestEntry, Sample, Split};
pub use error::{HarnessError, Result};
pub use experiment::{
    run_experiment, Aggregates, Defense, ExperimentConfig, ExperimentReport, Method, SampleRecord, TraceRow,
};
pub use sweep::{run_sweep, SweepParam, SweepReport};
