use std::io::{self, Write};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::closedloop::{ControlContext, EpisodeSummary};
use crate::mlp::{Mlp, RunningNormalizer};
use crate::plant::EpisodeConfig;
use crate::policy::{MetaPolicy, ParamGroup, PolicyError, FEATURES};

use super::checkpoint::{restore_rng, rng_state, Archive, CheckpointError, Tensor};
use super::rollout::{collect, EpisodeRun};
use super::update::{Batch, PpoConfig, PpoLearner, UpdateMetrics};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Hash)]
#[serde(rename_all = "snake_case")]
pub enum TrainMode {
    Joint,
    Recompute,
    Horizon,
    Lqr,
}

impl TrainMode {
    pub fn trainable(&self) -> Vec<ParamGroup> {
        match self {
            TrainMode::Joint => ParamGroup::ALL.to_vec(),
            TrainMode::Recompute => vec![ParamGroup::Recompute],
            TrainMode::Horizon => vec![ParamGroup::Horizon, ParamGroup::Dispersion],
            TrainMode::Lqr => vec![ParamGroup::Lqr],
        }
    }

    pub fn default_frame_skips(&self) -> Vec<usize> {
        match self {
            TrainMode::Horizon => vec![10],
            _ => vec![1, 2, 3, 4],
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            TrainMode::Joint => "joint",
            TrainMode::Recompute => "recompute",
            TrainMode::Horizon => "horizon",
            TrainMode::Lqr => "lqr",
        }
    }
}

/// One row of the training log.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct IterationMetrics {
    pub iteration: u64,
    pub wall_clock: f64,
    pub env_steps: u64,
    pub episodes: usize,
    pub mean_episode_cost: f64,
    pub mean_control_cost: f64,
    pub mean_computation_cost: f64,
    pub recompute_fraction: f64,
    pub mean_horizon: f64,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub grad_norm: f64,
    pub approx_kl: f64,
    pub clip_fraction: f64,
    pub sigma_mpc: f64,
    pub sigma_dual: f64,
    pub alpha: f64,
    pub skipped: usize,
}

pub const METRICS_HEADER: &str = "iteration,wall_clock,env_steps,episodes,mean_episode_cost,mean_control_cost,\
mean_computation_cost,recompute_fraction,mean_horizon,policy_loss,value_loss,grad_norm,approx_kl,clip_fraction,\
sigma_mpc,sigma_dual,alpha,skipped";

impl IterationMetrics {
    pub fn write_row<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(
            w,
            "{},{:.3},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.iteration,
            self.wall_clock,
            self.env_steps,
            self.episodes,
            self.mean_episode_cost,
            self.mean_control_cost,
            self.mean_computation_cost,
            self.recompute_fraction,
            self.mean_horizon,
            self.policy_loss,
            self.value_loss,
            self.grad_norm,
            self.approx_kl,
            self.clip_fraction,
            self.sigma_mpc,
            self.sigma_dual,
            self.alpha,
            self.skipped
        )
    }
}

/// Aggregate statistics of a set of episodes.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EpisodeStats {
    pub episodes: usize,
    pub mean_total_cost: f64,
    pub mean_control_cost: f64,
    pub mean_computation_cost: f64,
    pub mean_constraint_cost: f64,
    pub recompute_fraction: f64,
    pub mean_horizon: f64,
    pub violations: usize,
    pub unconverged: usize,
    pub solve_time: f64,
}

impl EpisodeStats {
    pub fn from_summaries<'a>(summaries: impl IntoIterator<Item = &'a EpisodeSummary>) -> Self {
        let mut s = Self::default();
        let (mut steps, mut computations, mut horizon_sum) = (0usize, 0usize, 0usize);
        for e in summaries {
            s.episodes += 1;
            s.mean_total_cost += e.total_cost();
            s.mean_control_cost += e.control_cost;
            s.mean_computation_cost += e.computation_cost;
            s.mean_constraint_cost += e.constraint_cost;
            s.violations += usize::from(e.violated);
            s.unconverged += e.unconverged;
            s.solve_time += e.solve_time;
            steps += e.steps;
            computations += e.computations;
            horizon_sum += e.horizons.iter().sum::<usize>();
        }
        if s.episodes > 0 {
            let n = s.episodes as f64;
            s.mean_total_cost /= n;
            s.mean_control_cost /= n;
            s.mean_computation_cost /= n;
            s.mean_constraint_cost /= n;
        }
        if steps > 0 {
            s.recompute_fraction = computations as f64 / steps as f64;
        }
        if computations > 0 {
            s.mean_horizon = horizon_sum as f64 / computations as f64;
        }
        s
    }
}

/// Algorithm state across iterations: learner, actor generators and counters.
#[derive(Clone, Debug)]
pub struct Trainer {
    pub learner: PpoLearner,
    pub mode: TrainMode,
    pub episode_config: EpisodeConfig,
    pub frame_skips: Vec<usize>,
    pub actor_rngs: Vec<ChaCha8Rng>,
    pub update_rng: ChaCha8Rng,
    /// Running statistics of the discounted return, for reward scaling.
    pub return_stats: RunningNormalizer,
    pub env_steps: u64,
    pub iteration: u64,
    pub wall_clock: f64,
}

impl Trainer {
    pub fn new(
        policy: MetaPolicy,
        config: PpoConfig,
        mode: TrainMode,
        episode_config: EpisodeConfig,
        frame_skips: Vec<usize>,
        seed: u64,
    ) -> Self {
        let mut root = ChaCha8Rng::seed_from_u64(seed);
        let hidden = config.value_hidden;
        let value = Mlp::init(&[FEATURES, hidden, hidden, 1], 1.0, &mut root);
        let actor_rngs = (0..config.actors).map(|i| {
            let mut r = root.clone();
            r.set_stream(1 + i as u64);
            r
        }).collect();
        let mut update_rng = root.clone();
        update_rng.set_stream(u64::MAX);
        Self {
            learner: PpoLearner::new(policy, value, config, mode.trainable()),
            mode,
            episode_config,
            frame_skips,
            actor_rngs,
            update_rng,
            return_stats: RunningNormalizer::new(1, u64::MAX),
            env_steps: 0,
            iteration: 0,
            wall_clock: 0.0,
        }
    }

    pub fn policy(&self) -> &MetaPolicy {
        &self.learner.policy
    }

    /// Collect with every actor against the current parameters, spreading
    /// actors over `workers` threads. Results are ordered by actor.
    pub fn collect(&mut self, ctx: &ControlContext, workers: usize) -> Result<Vec<Vec<EpisodeRun>>, PolicyError> {
        let policy = &self.learner.policy;
        let value = &self.learner.value;
        let min = self.learner.config.steps_per_actor;
        let (cfg, skips) = (&self.episode_config, &self.frame_skips);
        let per_thread = self.actor_rngs.len().div_ceil(workers.max(1));
        std::thread::scope(|scope| {
            let handles: Vec<_> = self
                .actor_rngs
                .chunks_mut(per_thread)
                .map(|rngs| {
                    scope.spawn(move || {
                        rngs.iter_mut().map(|rng| collect(ctx, cfg, policy, value, skips, min, rng)).collect::<Vec<_>>()
                    })
                })
                .collect();
            handles.into_iter().flat_map(|h| h.join().expect("rollout worker panicked")).collect()
        })
    }

    /// One collection and update phase.
    pub fn iterate(&mut self, ctx: &ControlContext, workers: usize) -> Result<IterationMetrics, PolicyError> {
        let start = Instant::now();
        let runs: Vec<EpisodeRun> = self.collect(ctx, workers)?.into_iter().flatten().collect();
        for run in &runs {
            for s in &run.samples {
                self.learner.policy.normalizer.update(&s.raw_features);
            }
        }
        let stats = EpisodeStats::from_summaries(runs.iter().map(|r| &r.summary));
        let steps: usize = runs.iter().map(|r| r.summary.steps).sum();
        let config = self.learner.config;
        let samples: Vec<_> = runs.into_iter().flat_map(|r| r.samples).collect();
        let rewards = self.scale_rewards(&samples);
        let batch = Batch::with_rewards(samples, rewards, config.gamma, config.gae_lambda);
        let update: UpdateMetrics = self.learner.update(ctx, &batch, &mut self.update_rng)?;
        self.env_steps += steps as u64;
        self.iteration += 1;
        self.wall_clock += start.elapsed().as_secs_f64();
        let p = &self.learner.policy;
        Ok(IterationMetrics {
            iteration: self.iteration,
            wall_clock: self.wall_clock,
            env_steps: self.env_steps,
            episodes: stats.episodes,
            mean_episode_cost: stats.mean_total_cost,
            mean_control_cost: stats.mean_control_cost,
            mean_computation_cost: stats.mean_computation_cost,
            recompute_fraction: stats.recompute_fraction,
            mean_horizon: stats.mean_horizon,
            policy_loss: update.policy_loss,
            value_loss: update.value_loss,
            grad_norm: update.grad_norm,
            approx_kl: update.approx_kl,
            clip_fraction: update.clip_fraction,
            sigma_mpc: p.log_sigma_mpc.exp(),
            sigma_dual: p.log_sigma_dual.exp(),
            alpha: p.alpha,
            skipped: update.skipped,
        })
    }

    /// Rewards divided by the running std of the discounted return and clipped,
    /// after folding this batch into the statistics.
    fn scale_rewards(&mut self, samples: &[super::RolloutSample]) -> Vec<f64> {
        let config = self.learner.config;
        let raw: Vec<f64> = samples.iter().map(|s| s.reward).collect();
        if !config.normalize_reward {
            return raw;
        }
        let mut ret = 0.0;
        for s in samples {
            ret = config.gamma * ret + s.reward;
            self.return_stats.update(&[ret]);
            if s.episode_end {
                ret = 0.0;
            }
        }
        let std = self.return_stats.std()[0];
        raw.iter().map(|r| (r / std).clamp(-config.reward_clip, config.reward_clip)).collect()
    }

    pub fn to_archive(&self) -> Archive {
        let mut a = Archive::default();
        let p = &self.learner.policy;
        let params = p.params();
        for (group, range) in p.layout() {
            a.insert(format!("policy.{}", group.name()), Tensor::vector(params[range].to_vec()));
        }
        a.insert("value", Tensor::vector(self.learner.value.params()));
        a.insert("normalizer.count", Tensor::scalar(p.normalizer.count as f64));
        a.insert("normalizer.mean", Tensor::vector(p.normalizer.mean.clone()));
        a.insert("normalizer.m2", Tensor::vector(p.normalizer.m2.clone()));
        a.insert("returns.count", Tensor::scalar(self.return_stats.count as f64));
        a.insert("returns.mean", Tensor::vector(self.return_stats.mean.clone()));
        a.insert("returns.m2", Tensor::vector(self.return_stats.m2.clone()));
        a.insert("adam.m", Tensor::vector(self.learner.adam.m.clone()));
        a.insert("adam.v", Tensor::vector(self.learner.adam.v.clone()));
        a.insert("adam.step", Tensor::scalar(self.learner.adam.step as f64));
        a.insert("trainer.env_steps", Tensor::scalar(self.env_steps as f64));
        a.insert("trainer.iteration", Tensor::scalar(self.iteration as f64));
        a.insert("trainer.wall_clock", Tensor::scalar(self.wall_clock));
        for (i, rng) in self.actor_rngs.iter().enumerate() {
            a.insert(format!("rng.actor{i}"), Tensor::bytes(rng_state(rng)));
        }
        a.insert("rng.update", Tensor::bytes(rng_state(&self.update_rng)));
        a
    }

    /// Restore state into a trainer built from the same configuration.
    pub fn restore(&mut self, a: &Archive) -> Result<(), CheckpointError> {
        load_policy(&mut self.learner.policy, a)?;
        let n = self.learner.value.num_params();
        self.learner.value.set_params(a.f64s_sized("value", n)?).map_err(|e| CheckpointError::Format(e.to_string()))?;
        self.return_stats.count = a.scalar("returns.count")? as u64;
        self.return_stats.mean = a.f64s_sized("returns.mean", 1)?.to_vec();
        self.return_stats.m2 = a.f64s_sized("returns.m2", 1)?.to_vec();
        let dim = self.learner.adam.m.len();
        self.learner.adam.m = a.f64s_sized("adam.m", dim)?.to_vec();
        self.learner.adam.v = a.f64s_sized("adam.v", dim)?.to_vec();
        self.learner.adam.step = a.scalar("adam.step")? as u64;
        self.env_steps = a.scalar("trainer.env_steps")? as u64;
        self.iteration = a.scalar("trainer.iteration")? as u64;
        self.wall_clock = a.scalar("trainer.wall_clock")?;
        for (i, rng) in self.actor_rngs.iter_mut().enumerate() {
            *rng = restore_rng(a.u8s(&format!("rng.actor{i}"))?)?;
        }
        self.update_rng = restore_rng(a.u8s("rng.update")?)?;
        Ok(())
    }
}

/// Policy parameters and normalizer from an archive, into `policy`.
pub fn load_policy(policy: &mut MetaPolicy, a: &Archive) -> Result<(), CheckpointError> {
    let mut params = policy.params();
    for (group, range) in policy.layout() {
        let v = a.f64s_sized(&format!("policy.{}", group.name()), range.len())?;
        params[range].copy_from_slice(v);
    }
    policy.set_params(&params).map_err(|e| CheckpointError::Format(e.to_string()))?;
    policy.normalizer.count = a.scalar("normalizer.count")? as u64;
    policy.normalizer.mean = a.f64s_sized("normalizer.mean", FEATURES)?.to_vec();
    policy.normalizer.m2 = a.f64s_sized("normalizer.m2", FEATURES)?.to_vec();
    Ok(())
}
