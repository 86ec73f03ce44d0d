//! Closed-loop simulation of the event-triggered controller on the true plant:
//! warm-started recomputation, dual-mode control laws between computations,
//! per-episode cost accounting and fixed baseline schedules.

use std::sync::Arc;

use nalgebra::{DMatrix, Vector4};
use serde::{Deserialize, Serialize};

use crate::ocp::{linearize_steady, shift_warm_start, OcpProblem, PendulumOcp, SolveRecord};
use crate::plant::{clamp_input, Episode, EpisodeSpec, PendulumParams, StageCost, StepOutcome};
use crate::policy::{control_laws, AugmentedState, Computation, ControlLaws, LqrEvaluator, PolicyError};
use crate::ppo::{RewardConfig, RewardTerms};
use crate::riccati::{init_weights, to_dmatrix, column_to_dmatrix, LqrWeights, RiccatiError};

/// Everything fixed across episodes: MPC problem, true plant and cost, reward
/// weights and the steady-state linearization used by the LQR.
#[derive(Clone, Debug)]
pub struct ControlContext {
    pub ocp: PendulumOcp,
    pub plant: PendulumParams,
    pub cost: StageCost,
    pub reward: RewardConfig,
    pub a_s: DMatrix<f64>,
    pub b_s: DMatrix<f64>,
}

impl ControlContext {
    pub fn new(ocp: PendulumOcp, plant: PendulumParams, cost: StageCost, reward: RewardConfig) -> Self {
        let (a, b) = linearize_steady(&ocp.model, &Vector4::zeros(), 0.0);
        Self { ocp, plant, cost, reward, a_s: to_dmatrix(&a), b_s: column_to_dmatrix(&b) }
    }

    /// LQR weights from the MPC stage-cost Hessians at upright.
    pub fn default_weights(&self) -> LqrWeights {
        init_weights(&self.ocp.cost.cost, &self.ocp.cost.params, &crate::plant::PlantState::UPRIGHT)
    }

    pub fn evaluator(&self, weights: &LqrWeights) -> Result<LqrEvaluator, RiccatiError> {
        LqrEvaluator::new(weights, &self.a_s, &self.b_s)
    }
}

/// Per-episode accounting, all costs positive (`C = -R`).
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EpisodeSummary {
    pub control_cost: f64,
    pub computation_cost: f64,
    pub constraint_cost: f64,
    pub steps: usize,
    pub computations: usize,
    pub violated: bool,
    /// Horizon of every computation, in order.
    pub horizons: Vec<usize>,
    /// Steps between consecutive computations.
    pub gaps: Vec<usize>,
    pub solve_time: f64,
    pub unconverged: usize,
}

impl EpisodeSummary {
    pub fn total_cost(&self) -> f64 {
        self.control_cost + self.computation_cost + self.constraint_cost
    }

    pub fn recompute_fraction(&self) -> f64 {
        if self.steps == 0 {
            0.0
        } else {
            self.computations as f64 / self.steps as f64
        }
    }

    pub fn mean_horizon(&self) -> f64 {
        if self.horizons.is_empty() {
            0.0
        } else {
            self.horizons.iter().sum::<usize>() as f64 / self.horizons.len() as f64
        }
    }

    fn charge(&mut self, cost: f64, terms: &RewardTerms) {
        self.control_cost += cost;
        self.constraint_cost -= terms.constraint;
        self.steps += 1;
    }
}

/// Result of one plant step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Transition {
    pub outcome: StepOutcome,
    pub reward: RewardTerms,
    /// Input actually applied, after clamping.
    pub applied: f64,
}

/// One episode under the event-triggered controller.
#[derive(Clone, Debug)]
pub struct ClosedLoop {
    pub episode: Episode,
    pub state: AugmentedState,
    pub computation: Arc<Computation>,
    pub summary: EpisodeSummary,
    pub records: Vec<SolveRecord>,
    pending: Option<usize>,
    last_computation_t: usize,
}

impl ClosedLoop {
    /// Start an episode with a computation at `t = 0`.
    pub fn start(ctx: &ControlContext, spec: EpisodeSpec, horizon: usize) -> Result<Self, PolicyError> {
        let episode = Episode::new(spec, ctx.plant, ctx.cost);
        let x0 = episode.state();
        let reference = episode.reference();
        let solution = ctx.ocp.solve(&OcpProblem { x0, u_prev: 0.0, reference, horizon }, None)?;
        let mut this = Self {
            state: AugmentedState::at_computation(x0, reference, horizon),
            computation: Arc::new(Computation::new(solution)),
            episode,
            summary: EpisodeSummary::default(),
            records: Vec::new(),
            pending: None,
            last_computation_t: 0,
        };
        this.register(horizon);
        Ok(this)
    }

    fn register(&mut self, horizon: usize) {
        let sol = &self.computation.solution;
        self.records.push(SolveRecord::new(self.episode.t(), sol));
        self.summary.solve_time += sol.solve_time;
        self.summary.unconverged += usize::from(!sol.is_converged());
        self.summary.computations += 1;
        self.summary.horizons.push(horizon);
        if self.summary.computations > 1 {
            self.summary.gaps.push(self.episode.t() - self.last_computation_t);
        }
        self.last_computation_t = self.episode.t();
        self.pending = Some(horizon);
    }

    /// Solve a fresh OCP at the current state, warm-started from the
    /// previous computation shifted by the elapsed steps.
    pub fn recompute(&mut self, ctx: &ControlContext, horizon: usize) -> Result<(), PolicyError> {
        let x0 = self.episode.state();
        let reference = self.episode.reference();
        let warm = shift_warm_start(&self.computation.solution, self.state.steps_since, horizon);
        let problem = OcpProblem { x0, u_prev: self.episode.u_prev(), reference, horizon };
        let solution = ctx.ocp.solve(&problem, Some(&warm))?;
        self.computation = Arc::new(Computation::new(solution));
        self.state = AugmentedState::at_computation(x0, reference, horizon);
        self.register(horizon);
        Ok(())
    }

    pub fn laws(&self, lqr: &mut LqrEvaluator) -> Result<ControlLaws, PolicyError> {
        let gains = lqr.sweep(&self.computation)?.clone();
        Ok(control_laws(&self.state, &self.computation, &gains, lqr.k_inf()))
    }

    pub fn is_finished(&self) -> bool {
        self.episode.is_finished()
    }

    /// Apply `u` (clamped to the actuator range) for one period.
    pub fn apply(&mut self, ctx: &ControlContext, u: f64) -> Transition {
        let applied = clamp_input(u);
        let t = self.episode.t();
        let computed = self.pending.take();
        let outcome = self.episode.advance(applied, computed.is_some(), self.state.horizon_i);
        let reward = ctx.reward.reward(outcome.cost, outcome.violated, t, self.episode.spec.horizon, computed);
        self.summary.charge(outcome.cost, &reward);
        if computed.is_some() {
            let horizons: usize = self.summary.horizons.iter().sum();
            self.summary.computation_cost = ctx.reward.lambda_c * horizons as f64;
        }
        self.summary.violated |= outcome.violated;
        self.state = self.state.transition(None, outcome.state, self.episode.reference());
        Transition { outcome, reward, applied }
    }
}

/// Fixed baseline: recompute every `period` steps with a constant horizon,
/// MPC+LQR in between.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Schedule {
    pub period: usize,
    pub horizon: usize,
}

pub fn run_schedule(
    ctx: &ControlContext,
    lqr: &mut LqrEvaluator,
    spec: &EpisodeSpec,
    schedule: Schedule,
) -> Result<EpisodeSummary, PolicyError> {
    let mut cl = ClosedLoop::start(ctx, spec.clone(), schedule.horizon)?;
    while !cl.is_finished() {
        let t = cl.episode.t();
        if t > 0 && t % schedule.period == 0 {
            cl.recompute(ctx, schedule.horizon)?;
        }
        let u = cl.laws(lqr)?.u_dual;
        cl.apply(ctx, u);
    }
    lqr.clear_cache();
    Ok(cl.summary)
}
