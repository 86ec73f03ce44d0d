use rand::seq::IndexedRandom;
use rand::Rng;

use crate::closedloop::{ClosedLoop, ControlContext, EpisodeSummary};
use crate::mlp::Mlp;
use crate::plant::{EpisodeConfig, EpisodeSpec};
use crate::policy::{InputMean, LqrEvaluator, MetaPolicy, Mode, PolicyError, PolicySample};

use super::RewardTerms;

/// One recorded decision: the action, its old log-probability and value, and
/// the reward summed over the frame-skip window.
#[derive(Clone, Debug)]
pub struct RolloutSample {
    pub action: PolicySample,
    /// Features before standardization, fed to the normalizer after collection.
    pub raw_features: Vec<f64>,
    pub log_prob: f64,
    pub value: f64,
    pub reward: f64,
    pub terms: RewardTerms,
    /// Value of the state after the window; 0 after a violation.
    pub next_value: f64,
    pub episode_end: bool,
    /// Plant steps covered by this sample.
    pub steps: usize,
}

/// How a policy episode is run.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpisodeOptions {
    pub mode: Mode,
    pub frame_skip: usize,
    /// Replace the recompute head by recomputing every this many steps.
    pub recompute_period: Option<usize>,
    /// Upper bound on any selected horizon.
    pub horizon_cap: Option<usize>,
}

impl EpisodeOptions {
    pub fn explore(frame_skip: usize) -> Self {
        Self { mode: Mode::Explore, frame_skip, recompute_period: None, horizon_cap: None }
    }

    pub fn evaluate() -> Self {
        Self { mode: Mode::Exploit, frame_skip: 1, recompute_period: None, horizon_cap: None }
    }
}

#[derive(Clone, Debug)]
pub struct EpisodeRun {
    pub summary: EpisodeSummary,
    pub samples: Vec<RolloutSample>,
}

fn value_of(value: Option<&Mlp>, features: &[f64]) -> Result<f64, PolicyError> {
    Ok(match value {
        Some(net) => net.forward(features)?[0],
        None => 0.0,
    })
}

/// Run one episode under the meta-policy: an initial computation at `N_max`
/// whose input is applied at `t = 0`, then one decision per frame-skip window.
/// Samples are recorded when a value network is given.
pub fn run_policy_episode<R: Rng + ?Sized>(
    ctx: &ControlContext,
    policy: &MetaPolicy,
    value: Option<&Mlp>,
    lqr: &mut LqrEvaluator,
    spec: EpisodeSpec,
    options: EpisodeOptions,
    rng: &mut R,
) -> Result<EpisodeRun, PolicyError> {
    let range = policy.range();
    let mut cl = ClosedLoop::start(ctx, spec, range.max)?;
    let u0 = cl.laws(lqr)?.u_mpc;
    cl.apply(ctx, u0);
    let mut samples = Vec::new();

    while !cl.is_finished() {
        let raw = cl.state.features();
        let features = policy.normalizer.normalize(&raw);
        let (mut recompute, mut horizon) = policy.decide(&features, options.mode, rng)?;
        if let Some(period) = options.recompute_period {
            recompute = cl.episode.t() % period == 0;
            horizon = recompute.then(|| policy.horizon_head(&features)).transpose()?.map(|gp| match options.mode {
                Mode::Explore => gp.sample(&range, rng),
                Mode::Exploit => gp.mode(&range),
            });
        }
        if let (Some(cap), Some(n)) = (options.horizon_cap, horizon.as_mut()) {
            *n = (*n).min(cap);
        }
        let stored = cl.state.horizon_i;
        if let Some(n) = horizon {
            cl.recompute(ctx, n)?;
        }
        let laws = cl.laws(lqr)?;
        let (mean, mean_value) = if recompute {
            (InputMean::Mpc(laws.u_mpc), laws.u_mpc)
        } else {
            (laws.dual.clone(), laws.u_dual)
        };
        let input = policy.sample_input(recompute, mean_value, options.mode, rng);
        let sigma = policy.input_distribution(recompute, mean_value).std();
        let noise = (input - mean_value) / sigma;
        let action = PolicySample { features, recompute, horizon: horizon.unwrap_or(stored), input, mean };
        let record = value.is_some();
        let (log_prob, value_now) = if record {
            (policy.log_prob(&action, lqr)?, value_of(value, &action.features)?)
        } else {
            (0.0, 0.0)
        };

        let mut terms = RewardTerms::default();
        terms.add(&cl.apply(ctx, input).reward);
        let mut steps = 1;
        while steps < options.frame_skip && !cl.is_finished() {
            if let Some(n) = horizon {
                cl.recompute(ctx, n)?;
            }
            let laws = cl.laws(lqr)?;
            let m = if recompute { laws.u_mpc } else { laws.u_dual };
            terms.add(&cl.apply(ctx, m + sigma * noise).reward);
            steps += 1;
        }

        if record {
            let next_value = if cl.summary.violated {
                0.0
            } else {
                value_of(value, &policy.normalizer.normalize(&cl.state.features()))?
            };
            samples.push(RolloutSample {
                action,
                raw_features: raw,
                log_prob,
                value: value_now,
                reward: terms.total(),
                terms,
                next_value,
                episode_end: cl.is_finished(),
                steps,
            });
        }
    }
    lqr.clear_cache();
    Ok(EpisodeRun { summary: cl.summary, samples })
}

/// Run whole exploration episodes, frame-skip drawn per episode, until at
/// least `min_samples` decisions are recorded.
pub fn collect<R: Rng + ?Sized>(
    ctx: &ControlContext,
    episode_config: &EpisodeConfig,
    policy: &MetaPolicy,
    value: &Mlp,
    frame_skips: &[usize],
    min_samples: usize,
    rng: &mut R,
) -> Result<Vec<EpisodeRun>, PolicyError> {
    let mut lqr = ctx.evaluator(&policy.lqr)?;
    let mut runs = Vec::new();
    let mut recorded = 0;
    while recorded < min_samples {
        let spec = EpisodeSpec::sample(episode_config, rng);
        let d = *frame_skips.choose(rng).expect("at least one frame-skip value");
        let run = run_policy_episode(ctx, policy, Some(value), &mut lqr, spec, EpisodeOptions::explore(d), rng)?;
        recorded += run.samples.len();
        runs.push(run);
    }
    Ok(runs)
}
