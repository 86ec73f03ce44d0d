//! Proximal policy optimization of the meta-policy: reward, advantage
//! estimation, rollouts with frame-skip, the clipped update and checkpoints.

mod adam;
pub mod checkpoint;
mod gae;
mod reward;
mod rollout;
mod trainer;
mod update;

pub use adam::Adam;
pub use gae::{gae, segmented_gae};
pub use reward::{RewardConfig, RewardTerms};
pub use rollout::{collect, run_policy_episode, EpisodeOptions, EpisodeRun, RolloutSample};
pub use trainer::{load_policy, EpisodeStats, IterationMetrics, TrainMode, Trainer, METRICS_HEADER};
pub use update::{clipped_objective, objective_active, Batch, LossGradient, PpoConfig, PpoLearner, UpdateMetrics};
