use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::closedloop::ControlContext;
use crate::mlp::Mlp;
use crate::policy::{LqrEvaluator, MetaPolicy, ParamGroup, PolicyError};

use super::adam::Adam;
use super::gae::segmented_gae;
use super::rollout::RolloutSample;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PpoConfig {
    pub learning_rate: f64,
    pub clip_range: f64,
    pub epochs: usize,
    pub minibatches: usize,
    pub gamma: f64,
    pub gae_lambda: f64,
    pub vf_coef: f64,
    pub max_grad_norm: f64,
    /// Minimum decisions collected per actor and iteration.
    pub steps_per_actor: usize,
    pub actors: usize,
    pub value_hidden: usize,
    pub adam_epsilon: f64,
    pub normalize_advantage: bool,
    /// Divide rewards by the running std of the discounted return.
    pub normalize_reward: bool,
    pub reward_clip: f64,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            learning_rate: 3e-4,
            clip_range: 0.25,
            epochs: 10,
            minibatches: 1,
            gamma: 0.99,
            gae_lambda: 0.9,
            vf_coef: 0.5,
            max_grad_norm: 0.5,
            steps_per_actor: 256,
            actors: 4,
            value_hidden: 128,
            adam_epsilon: 1e-5,
            normalize_advantage: true,
            normalize_reward: true,
            reward_clip: 10.0,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.learning_rate > 0.0 && self.clip_range > 0.0 && self.max_grad_norm > 0.0) {
            return Err("learning_rate, clip_range and max_grad_norm must be positive".into());
        }
        if self.epochs == 0 || self.minibatches == 0 || self.steps_per_actor == 0 || self.actors == 0 {
            return Err("epochs, minibatches, steps_per_actor and actors must be positive".into());
        }
        if !((0.0..=1.0).contains(&self.gamma) && (0.0..=1.0).contains(&self.gae_lambda)) {
            return Err("gamma and gae_lambda must lie in [0, 1]".into());
        }
        Ok(())
    }
}

/// `min(r A, clip(r, 1 - eps, 1 + eps) A)`.
pub fn clipped_objective(ratio: f64, advantage: f64, clip: f64) -> f64 {
    (ratio * advantage).min(ratio.clamp(1.0 - clip, 1.0 + clip) * advantage)
}

/// Whether the unclipped term is the one selected, i.e. the gradient flows.
pub fn objective_active(ratio: f64, advantage: f64, clip: f64) -> bool {
    ratio * advantage <= ratio.clamp(1.0 - clip, 1.0 + clip) * advantage
}

/// Collected samples with their advantages and value targets.
#[derive(Clone, Debug)]
pub struct Batch {
    pub samples: Vec<RolloutSample>,
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
}

impl Batch {
    /// Samples must be grouped by episode, each ending with `episode_end`.
    pub fn new(samples: Vec<RolloutSample>, gamma: f64, lambda: f64) -> Self {
        let rewards = samples.iter().map(|s| s.reward).collect();
        Self::with_rewards(samples, rewards, gamma, lambda)
    }

    /// As `new`, with the rewards used for the advantages given separately.
    pub fn with_rewards(samples: Vec<RolloutSample>, rewards: Vec<f64>, gamma: f64, lambda: f64) -> Self {
        let values: Vec<f64> = samples.iter().map(|s| s.value).collect();
        let next: Vec<f64> = samples.iter().map(|s| s.next_value).collect();
        let mut ends: Vec<bool> = samples.iter().map(|s| s.episode_end).collect();
        if let Some(last) = ends.last_mut() {
            *last = true;
        }
        let advantages = segmented_gae(&rewards, &values, &next, &ends, gamma, lambda);
        let returns = advantages.iter().zip(&values).map(|(a, v)| a + v).collect();
        Self { samples, advantages, returns }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct UpdateMetrics {
    pub policy_loss: f64,
    pub value_loss: f64,
    /// Global gradient norm before clipping, averaged over steps.
    pub grad_norm: f64,
    pub approx_kl: f64,
    pub clip_fraction: f64,
    pub skipped: usize,
}

/// Loss terms and the gradient of `policy_loss + vf_coef * value_loss`.
#[derive(Clone, Debug, PartialEq)]
pub struct LossGradient {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub approx_kl: f64,
    pub clip_fraction: f64,
    pub grad: Vec<f64>,
}

/// Policy, value function and optimizer state, with the set of trainable
/// policy groups.
#[derive(Clone, Debug)]
pub struct PpoLearner {
    pub policy: MetaPolicy,
    pub value: Mlp,
    pub adam: Adam,
    pub config: PpoConfig,
    pub trainable: Vec<ParamGroup>,
}

impl PpoLearner {
    pub fn new(policy: MetaPolicy, value: Mlp, config: PpoConfig, trainable: Vec<ParamGroup>) -> Self {
        let dim = policy.num_params() + value.num_params();
        Self { adam: Adam::new(dim, config.learning_rate, config.adam_epsilon), policy, value, config, trainable }
    }

    /// Trainable entries of the joint (policy, value) vector.
    pub fn mask(&self) -> Vec<bool> {
        let mut mask = vec![false; self.policy.num_params()];
        for (group, range) in self.policy.layout() {
            if self.trainable.contains(&group) {
                mask[range].iter_mut().for_each(|m| *m = true);
            }
        }
        mask.extend(std::iter::repeat_n(true, self.value.num_params()));
        mask
    }

    pub fn params(&self) -> Vec<f64> {
        let mut p = self.policy.params();
        p.extend(self.value.params());
        p
    }

    pub fn set_params(&mut self, values: &[f64]) -> Result<(), PolicyError> {
        let n = self.policy.num_params();
        self.policy.set_params(&values[..n])?;
        self.value.set_params(&values[n..])?;
        Ok(())
    }

    /// `exp(log pi_new - log pi_old)` for every sample.
    pub fn ratios(&self, ctx: &ControlContext, batch: &Batch) -> Result<Vec<f64>, PolicyError> {
        let mut lqr = ctx.evaluator(&self.policy.lqr)?;
        batch.samples.iter().map(|s| Ok((self.policy.log_prob(&s.action, &mut lqr)? - s.log_prob).exp())).collect()
    }

    pub fn loss_and_gradient(
        &self,
        batch: &Batch,
        indices: &[usize],
        lqr: &mut LqrEvaluator,
    ) -> Result<LossGradient, PolicyError> {
        let n_policy = self.policy.num_params();
        let mut grad = vec![0.0; n_policy + self.value.num_params()];
        let b = indices.len() as f64;
        let mut advantages: Vec<f64> = indices.iter().map(|&i| batch.advantages[i]).collect();
        if self.config.normalize_advantage && indices.len() > 1 {
            let mean = advantages.iter().sum::<f64>() / b;
            let var = advantages.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / (b - 1.0);
            let std = var.sqrt() + 1e-8;
            advantages.iter_mut().for_each(|a| *a = (*a - mean) / std);
        }
        let clip = self.config.clip_range;
        let (mut policy_loss, mut value_loss, mut kl, mut clipped) = (0.0, 0.0, 0.0, 0.0);
        for (&i, &adv) in indices.iter().zip(&advantages) {
            let sample = &batch.samples[i];
            let log_prob = self.policy.log_prob(&sample.action, lqr)?;
            let log_ratio = log_prob - sample.log_prob;
            let ratio = log_ratio.exp();
            policy_loss -= clipped_objective(ratio, adv, clip) / b;
            kl += ((ratio - 1.0) - log_ratio) / b;
            if (ratio - 1.0).abs() > clip {
                clipped += 1.0 / b;
            }
            if objective_active(ratio, adv, clip) {
                self.policy.log_prob_grad(&sample.action, lqr, -adv * ratio / b, &mut grad[..n_policy])?;
            }
            let cache = self.value.forward_cached(&sample.action.features)?;
            let err = cache.output()[0] - batch.returns[i];
            value_loss += err * err / b;
            self.value.backward_into(&cache, &[2.0 * self.config.vf_coef * err / b], 1.0, &mut grad[n_policy..]);
        }
        Ok(LossGradient { policy_loss, value_loss, approx_kl: kl, clip_fraction: clipped, grad })
    }

    /// Clipped-surrogate epochs over the batch. Frozen groups get no update;
    /// steps with a non-finite gradient are skipped.
    pub fn update<R: Rng + ?Sized>(&mut self, ctx: &ControlContext, batch: &Batch, rng: &mut R) -> Result<UpdateMetrics, PolicyError> {
        let mask = self.mask();
        let mut metrics = UpdateMetrics::default();
        let mut steps = 0.0;
        let mut lqr = ctx.evaluator(&self.policy.lqr)?;
        let mut order: Vec<usize> = (0..batch.len()).collect();
        let chunk = batch.len().div_ceil(self.config.minibatches).max(1);
        for _ in 0..self.config.epochs {
            if self.config.minibatches > 1 {
                order.shuffle(rng);
            }
            for indices in order.chunks(chunk) {
                if lqr.weights != self.policy.lqr {
                    lqr = ctx.evaluator(&self.policy.lqr)?;
                }
                let mut lg = self.loss_and_gradient(batch, indices, &mut lqr)?;
                lg.grad.iter_mut().zip(&mask).filter(|(_, m)| !**m).for_each(|(g, _)| *g = 0.0);
                let norm = lg.grad.iter().map(|g| g * g).sum::<f64>().sqrt();
                if !norm.is_finite() {
                    metrics.skipped += 1;
                    continue;
                }
                if norm > self.config.max_grad_norm {
                    let scale = self.config.max_grad_norm / norm;
                    lg.grad.iter_mut().for_each(|g| *g *= scale);
                }
                let mut params = self.params();
                self.adam.update(&mut params, &lg.grad, &mask);
                self.set_params(&params)?;
                self.policy.clip_alpha();
                steps += 1.0;
                metrics.policy_loss += lg.policy_loss;
                metrics.value_loss += lg.value_loss;
                metrics.grad_norm += norm;
                metrics.approx_kl += lg.approx_kl;
                metrics.clip_fraction += lg.clip_fraction;
            }
        }
        if steps > 0.0 {
            metrics.policy_loss /= steps;
            metrics.value_loss /= steps;
            metrics.grad_norm /= steps;
            metrics.approx_kl /= steps;
            metrics.clip_fraction /= steps;
        }
        Ok(metrics)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_ratio_objectives_agree() {
        for a in [-2.0, 0.0, 1.5] {
            assert_eq!(clipped_objective(1.0, a, 0.25), a);
            assert!(objective_active(1.0, a, 0.25));
        }
    }

    #[test]
    fn clip_saturates() {
        let eps = 0.25;
        assert_eq!(clipped_objective(1.0 + 2.0 * eps, 2.0, eps), (1.0 + eps) * 2.0);
        assert!(!objective_active(1.0 + 2.0 * eps, 2.0, eps));
        assert_eq!(clipped_objective(1.0 - 2.0 * eps, -2.0, eps), (1.0 - eps) * -2.0);
        assert!(!objective_active(1.0 - 2.0 * eps, -2.0, eps));
        assert_eq!(clipped_objective(1.0 + 2.0 * eps, -2.0, eps), (1.0 + 2.0 * eps) * -2.0);
        assert!(objective_active(1.0 + 2.0 * eps, -2.0, eps));
    }
}
