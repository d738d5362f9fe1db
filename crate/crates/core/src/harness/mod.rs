//! Experiment orchestration: configuration, checkpoints, training runs,
//! evaluation sweeps and pattern export.

pub mod checkpoint;
pub mod config;
pub mod eval;
pub mod patterns;
pub mod train;

pub use checkpoint::Checkpoint;
pub use config::{ExperimentConfig, Method, Mode};
pub use eval::{evaluate_sweep, run_sweep, SweepRow};
pub use patterns::export_patterns;
pub use train::{load_agent, load_beam_module, run_training, TrainSummary};
