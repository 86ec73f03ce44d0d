use metampc_core::closedloop::ControlContext;
use metampc_core::policy::MetaPolicy;
use metampc_core::ppo::EpisodeOptions;
use serde::{Deserialize, Serialize};

use crate::{evaluate, HarnessError, Provenance, TestSet};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub scenario: String,
    pub total_cost: f64,
    /// Relative to the unmodified policy, in percent.
    pub change_percent: f64,
    pub recompute_fraction: f64,
    pub mean_horizon: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub provenance: Provenance,
    pub base_cost: f64,
    pub base_recompute_fraction: f64,
    /// Period of the fixed schedule matching the learned frequency.
    pub schedule_period: usize,
    pub rows: Vec<AblationRow>,
}

/// Alter one aspect of the policy at a time: default LQR weights, horizon
/// capped at 31, and a periodic schedule at the learned recompute frequency.
pub fn ablate(
    ctx: &ControlContext,
    policy: &MetaPolicy,
    test_set: &TestSet,
    seeds: &[u64],
    workers: usize,
    provenance: &Provenance,
) -> Result<AblationReport, HarnessError> {
    let base_options = EpisodeOptions::evaluate();
    let base = evaluate(ctx, policy, test_set, seeds, base_options, workers)?.stats();
    let period = (1.0 / base.recompute_fraction.max(1e-9)).round().max(1.0) as usize;

    let mut default_lqr = policy.clone();
    default_lqr.lqr = ctx.default_weights();
    let capped = EpisodeOptions { horizon_cap: Some(31), ..base_options };
    let scheduled = EpisodeOptions { recompute_period: Some(period), ..base_options };
    let scenarios = [
        ("default_lqr_weights", &default_lqr, base_options),
        ("horizon_cap_31", policy, capped),
        ("fixed_schedule", policy, scheduled),
    ];

    let mut rows = Vec::new();
    for (name, p, options) in scenarios {
        let stats = evaluate(ctx, p, test_set, seeds, options, workers)?.stats();
        rows.push(AblationRow {
            scenario: name.to_string(),
            total_cost: stats.mean_total_cost,
            change_percent: 100.0 * (stats.mean_total_cost - base.mean_total_cost) / base.mean_total_cost,
            recompute_fraction: stats.recompute_fraction,
            mean_horizon: stats.mean_horizon,
        });
    }
    Ok(AblationReport {
        provenance: provenance.clone(),
        base_cost: base.mean_total_cost,
        base_recompute_fraction: base.recompute_fraction,
        schedule_period: period,
        rows,
    })
}
