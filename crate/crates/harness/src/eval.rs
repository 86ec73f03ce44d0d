use std::io::Write;

use metampc_core::closedloop::{ControlContext, EpisodeSummary};
use metampc_core::policy::MetaPolicy;
use metampc_core::ppo::{run_policy_episode, EpisodeOptions, EpisodeStats};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::pool::map_indexed;
use crate::{HarnessError, Provenance, TestSet};

/// Test-set episodes under one policy, for every evaluation seed.
#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    /// Seed-major.
    pub summaries: Vec<EpisodeSummary>,
    pub seeds: Vec<u64>,
    pub episodes: usize,
}

impl Evaluation {
    pub fn stats(&self) -> EpisodeStats {
        EpisodeStats::from_summaries(&self.summaries)
    }

    pub fn seed_costs(&self) -> Vec<f64> {
        self.summaries
            .chunks(self.episodes)
            .map(|c| c.iter().map(EpisodeSummary::total_cost).sum::<f64>() / c.len() as f64)
            .collect()
    }

    /// Count of computations per selected horizon, indexed by horizon.
    pub fn horizon_histogram(&self, n_max: usize) -> Vec<u64> {
        let mut h = vec![0; n_max + 1];
        for n in self.summaries.iter().flat_map(|s| &s.horizons) {
            h[(*n).min(n_max)] += 1;
        }
        h
    }

    /// Count of steps between consecutive computations, indexed by gap.
    pub fn gap_histogram(&self) -> Vec<u64> {
        let longest = self.summaries.iter().flat_map(|s| &s.gaps).copied().max().unwrap_or(0);
        let mut h = vec![0; longest + 1];
        for g in self.summaries.iter().flat_map(|s| &s.gaps) {
            h[*g] += 1;
        }
        h
    }

    pub fn report(&self, provenance: &Provenance) -> EvalReport {
        let stats = self.stats();
        let costs = self.seed_costs();
        let mean = costs.iter().sum::<f64>() / costs.len() as f64;
        let var = if costs.len() > 1 {
            costs.iter().map(|c| (c - mean).powi(2)).sum::<f64>() / (costs.len() - 1) as f64
        } else {
            0.0
        };
        EvalReport {
            provenance: provenance.clone(),
            seeds: self.seeds.clone(),
            episodes: self.episodes,
            mean_total_cost: stats.mean_total_cost,
            seed_cost_std: var.sqrt(),
            mean_control_cost: stats.mean_control_cost,
            mean_computation_cost: stats.mean_computation_cost,
            mean_constraint_cost: stats.mean_constraint_cost,
            recompute_fraction: stats.recompute_fraction,
            mean_horizon: stats.mean_horizon,
            violations: stats.violations,
            unconverged: stats.unconverged,
            solve_time: stats.solve_time,
            seed_costs: costs,
        }
    }

    /// `horizon,count` and `gap,count` tables.
    pub fn write_histograms<W: Write>(&self, n_max: usize, horizons: W, gaps: W, provenance: &Provenance) -> Result<(), HarnessError> {
        for (mut w, name, counts) in
            [(horizons, "horizon", self.horizon_histogram(n_max)), (gaps, "gap", self.gap_histogram())]
        {
            provenance.write_comment(&mut w)?;
            writeln!(w, "{name},count")?;
            for (k, c) in counts.iter().enumerate() {
                writeln!(w, "{k},{c}")?;
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub provenance: Provenance,
    pub seeds: Vec<u64>,
    pub episodes: usize,
    pub mean_total_cost: f64,
    /// Spread of the per-seed mean cost.
    pub seed_cost_std: f64,
    pub mean_control_cost: f64,
    pub mean_computation_cost: f64,
    pub mean_constraint_cost: f64,
    pub recompute_fraction: f64,
    pub mean_horizon: f64,
    pub violations: usize,
    pub unconverged: usize,
    pub solve_time: f64,
    pub seed_costs: Vec<f64>,
}

/// Run `policy` over the test set once per evaluation seed. Episode `i` under
/// seed `s` draws from stream `i` of a generator seeded with `s`.
pub fn evaluate(
    ctx: &ControlContext,
    policy: &MetaPolicy,
    test_set: &TestSet,
    seeds: &[u64],
    options: EpisodeOptions,
    workers: usize,
) -> Result<Evaluation, HarnessError> {
    ctx.evaluator(&policy.lqr).map_err(|e| HarnessError::Numeric(e.to_string()))?;
    let n = test_set.len();
    let results = map_indexed(
        seeds.len() * n,
        workers,
        || ctx.evaluator(&policy.lqr).expect("checked above"),
        |lqr, job| {
            let (seed, i) = (seeds[job / n], job % n);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            let spec = test_set.episodes()[i].clone();
            run_policy_episode(ctx, policy, None, lqr, spec, options, &mut rng).map(|r| r.summary)
        },
    );
    let summaries = results.into_iter().collect::<Result<Vec<_>, _>>()?;
    Ok(Evaluation { summaries, seeds: seeds.to_vec(), episodes: n })
}
