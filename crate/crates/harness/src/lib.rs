//! Experiment orchestration for the learned event-triggered MPC: configs, the
//! fixed test set, baseline sweeps, training, evaluation, ablations and plot
//! data.

pub mod ablate;
pub mod config;
pub mod error;
pub mod eval;
pub mod plots;
mod pool;
pub mod provenance;
pub mod sweep;
pub mod testset;
pub mod train;

pub use ablate::{ablate, AblationReport, AblationRow};
pub use config::{ExperimentConfig, SweepConfig, TestSetConfig, TrainingConfig};
pub use error::HarnessError;
pub use eval::{evaluate, EvalReport, Evaluation};
pub use plots::emit_plots;
pub use provenance::{Provenance, CODE_VERSION};
pub use sweep::{baseline_sweep, SweepCell, SweepGrid};
pub use testset::TestSet;
pub use train::{load_checkpoint, train, TrainOutcome};
