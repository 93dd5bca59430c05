//! Structured experiments: baselines, seeded sweeps over a noise grid,
//! aggregation, timing and report files.

pub mod artifacts;
pub mod config;
pub mod models;
pub mod report;
pub mod sweep;

pub use config::{ExperimentConfig, ModelKind, SplitSizes};
pub use models::{measure_latency, LatencyStats, Predictor};
pub use report::{emit_report, load_report, mean_std, Aggregate, CellResult, ExperimentReport};
pub use sweep::{run_sweep, train_cell, CellModels};
