use serde::{Deserialize, Serialize};

/// Weights of the constraint and computation terms of the reward.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RewardConfig {
    /// Weight of the remaining-steps violation term, negative.
    pub lambda_h: f64,
    /// Weight of the computation term, entering as a penalty.
    pub lambda_c: f64,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self { lambda_h: -10.0, lambda_c: 1e-2 }
    }
}

/// Reward of one plant step split into its terms; `total()` is their sum.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RewardTerms {
    pub control: f64,
    pub constraint: f64,
    pub computation: f64,
}

impl RewardTerms {
    pub fn total(&self) -> f64 {
        self.control + self.constraint + self.computation
    }

    pub fn add(&mut self, other: &RewardTerms) {
        self.control += other.control;
        self.constraint += other.constraint;
        self.computation += other.computation;
    }
}

impl RewardConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.lambda_h >= 0.0 {
            return Err(format!("lambda_h must be negative, got {}", self.lambda_h));
        }
        if self.lambda_c < 0.0 {
            return Err(format!("lambda_c must be non-negative, got {}", self.lambda_c));
        }
        Ok(())
    }

    /// Reward of the step taken at index `t` of an episode of length `horizon`:
    /// stage cost of the next state, remaining-steps violation term and the
    /// horizon-proportional computation penalty.
    pub fn reward(&self, stage_cost: f64, violated: bool, t: usize, horizon: usize, computed: Option<usize>) -> RewardTerms {
        let remaining = horizon.saturating_sub(t) as f64;
        RewardTerms {
            control: -stage_cost,
            constraint: if violated { self.lambda_h * remaining } else { 0.0 },
            computation: computed.map_or(0.0, |n| -self.lambda_c * n as f64),
        }
    }
}
