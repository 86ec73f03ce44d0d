use std::fs;
use std::path::{Path, PathBuf};

use metampc_core::closedloop::ControlContext;
use metampc_core::ocp::{PendulumOcp, SolverSettings};
use metampc_core::plant::{EpisodeConfig, PendulumParams, StageCost};
use metampc_core::policy::PolicyConfig;
use metampc_core::ppo::{PpoConfig, RewardConfig, TrainMode};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::HarnessError;

/// Everything that determines an experiment. Every section is optional in the
/// TOML file and unknown keys are rejected.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// One training run per model seed.
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_seeds")]
    pub eval_seeds: Vec<u64>,
    #[serde(default = "default_output")]
    pub output: PathBuf,
    #[serde(default = "PendulumParams::plant")]
    pub plant: PendulumParams,
    /// Parameters of the prediction model inside the OCP.
    #[serde(default = "PendulumParams::mpc_model")]
    pub model: PendulumParams,
    #[serde(default)]
    pub cost: StageCost,
    #[serde(default)]
    pub solver: SolverSettings,
    #[serde(default)]
    pub policy: PolicyConfig,
    #[serde(default)]
    pub reward: RewardConfig,
    #[serde(default)]
    pub ppo: PpoConfig,
    /// Distribution of training episodes.
    #[serde(default)]
    pub episodes: EpisodeConfig,
    #[serde(default)]
    pub test_set: TestSetConfig,
    #[serde(default)]
    pub sweep: SweepConfig,
    #[serde(default)]
    pub training: TrainingConfig,
}

fn default_seeds() -> Vec<u64> {
    (0..5).collect()
}

fn default_output() -> PathBuf {
    PathBuf::from("results")
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TestSetConfig {
    pub size: usize,
    pub seed: u64,
}

impl Default for TestSetConfig {
    fn default() -> Self {
        Self { size: 25, seed: 2024 }
    }
}

/// Baseline grid: recompute every `period` steps at a fixed `horizon`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    pub periods: Vec<usize>,
    pub horizons: Vec<usize>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self { periods: vec![1, 2, 3, 4, 5, 8, 10, 15, 20], horizons: vec![4, 8, 12, 16, 20, 24, 28, 31, 35, 40] }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingConfig {
    pub steps: u64,
    /// Frame-skip values drawn per episode; empty uses the mode's default.
    pub frame_skips: Vec<usize>,
    /// Iterations between checkpoints.
    pub checkpoint_every: u64,
    /// Iterations between test-set evaluations that select the best policy;
    /// 0 disables them.
    pub eval_every: u64,
    pub workers: usize,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self { steps: 300_000, frame_skips: Vec::new(), checkpoint_every: 10, eval_every: 0, workers: 1 }
    }
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        toml::from_str("").expect("empty config uses defaults")
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = fs::read_to_string(path).map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, HarnessError> {
        let config: Self = toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    /// Hex SHA-256 of the canonical serialization.
    pub fn hash(&self) -> String {
        format!("{:x}", Sha256::digest(self.to_toml().as_bytes()))
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let check = |r: Result<(), String>| r.map_err(HarnessError::Config);
        check(self.plant.validate())?;
        check(self.model.validate())?;
        check(self.policy.validate())?;
        check(self.reward.validate())?;
        check(self.ppo.validate())?;
        check(self.episodes.validate())?;
        if self.seeds.is_empty() || self.eval_seeds.is_empty() {
            return Err(HarnessError::Config("seeds and eval_seeds must not be empty".into()));
        }
        if self.test_set.size == 0 {
            return Err(HarnessError::Config("test set must hold at least one episode".into()));
        }
        let range = self.policy.range();
        if let Some(n) = self.sweep.horizons.iter().find(|n| !(range.min..=range.max).contains(*n)) {
            return Err(HarnessError::Config(format!("sweep horizon {n} outside [{}, {}]", range.min, range.max)));
        }
        if self.sweep.periods.contains(&0) || self.training.frame_skips.contains(&0) {
            return Err(HarnessError::Config("periods and frame-skips must be positive".into()));
        }
        if self.training.checkpoint_every == 0 || self.training.workers == 0 {
            return Err(HarnessError::Config("checkpoint_every and workers must be positive".into()));
        }
        Ok(())
    }

    pub fn context(&self) -> ControlContext {
        let ocp = PendulumOcp::pendulum(self.model, self.cost, 1.0, self.solver);
        ControlContext::new(ocp, self.plant, self.cost, self.reward)
    }

    pub fn frame_skips(&self, mode: TrainMode) -> Vec<usize> {
        if self.training.frame_skips.is_empty() {
            mode.default_frame_skips()
        } else {
            self.training.frame_skips.clone()
        }
    }
}
