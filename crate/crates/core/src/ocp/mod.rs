//! Finite-horizon nonlinear optimal control by direct multiple shooting,
//! solved with a primal-dual interior point method whose Newton systems are
//! factorized by a Riccati recursion.

mod ipm;
mod model;

pub use model::{
    LinearModel, PendulumCost, PendulumModel, PredictionModel, QuadraticCost, StateCost,
};

use std::io::{self, Write};

use nalgebra::{Matrix4, Vector4};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::plant::{PendulumParams, PlantState, StageCost, INPUT_LIMIT, POSITION_LIMIT};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OcpError {
    #[error("initial cart position {0} already violates the position bound")]
    Infeasible(f64),
    #[error("prediction horizon must be at least one step")]
    EmptyHorizon,
    #[error("non-finite value in the optimal control problem")]
    NonFinite,
    #[error("could not make the reduced Hessian positive definite")]
    InertiaCorrection,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverSettings {
    /// Unscaled KKT tolerance.
    pub tolerance: f64,
    pub max_iterations: usize,
    pub initial_barrier: f64,
    /// Barrier parameter used when a warm start is supplied.
    pub warm_barrier: f64,
    pub min_barrier: f64,
    pub armijo: f64,
    /// Initial guesses are pushed at least this far inside the input bounds.
    pub input_margin: f64,
    pub position_margin: f64,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            tolerance: 1e-6,
            max_iterations: 200,
            initial_barrier: 0.1,
            warm_barrier: 1e-2,
            min_barrier: 1e-7,
            armijo: 1e-4,
            input_margin: 0.05,
            position_margin: 0.02,
        }
    }
}

/// Instance data of one MPC computation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OcpProblem {
    pub x0: PlantState,
    /// Input applied in the previous period, entering the first input-change term.
    pub u_prev: f64,
    /// Position reference, held constant over the horizon.
    pub reference: f64,
    pub horizon: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SolveStatus {
    Converged,
    /// Iteration cap reached; the best iterate is returned.
    MaxIterations,
}

#[derive(Clone, Debug, PartialEq)]
pub struct OcpSolution {
    pub u_seq: Vec<f64>,
    /// `x_pred[0]` is the measured initial state, `x_pred.len() == u_seq.len() + 1`.
    pub x_pred: Vec<Vector4<f64>>,
    /// Linearizations of the model at `(x_pred[k], u_seq[k])`.
    pub a_seq: Vec<Matrix4<f64>>,
    pub b_seq: Vec<Vector4<f64>>,
    /// Multipliers of the defect constraints, `costates[k]` belongs to `x_pred[k + 1]`.
    pub costates: Vec<Vector4<f64>>,
    pub objective: f64,
    pub kkt_residual: f64,
    pub iterations: usize,
    pub solve_time: f64,
    pub status: SolveStatus,
    pub reference: f64,
}

impl OcpSolution {
    pub fn horizon(&self) -> usize {
        self.u_seq.len()
    }

    pub fn is_converged(&self) -> bool {
        self.status == SolveStatus::Converged
    }

    pub fn predicted(&self, k: usize) -> PlantState {
        PlantState::from_vector(&self.x_pred[k])
    }
}

/// Initial guess for the primal variables and defect multipliers.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct WarmStart {
    pub inputs: Vec<f64>,
    /// Guesses for `x_1, x_2, ...`; missing tail states are simulated.
    pub states: Vec<Vector4<f64>>,
    pub costates: Vec<Vector4<f64>>,
}

impl WarmStart {
    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty() && self.states.is_empty()
    }
}

fn pad_to<T: Copy>(mut v: Vec<T>, n: usize, fill: T) -> Vec<T> {
    let last = v.last().copied().unwrap_or(fill);
    v.resize(n, last);
    v
}

/// Shift a previous solution forward by `steps_elapsed` periods and fit it to
/// `new_horizon`.
pub fn shift_warm_start(previous: &OcpSolution, steps_elapsed: usize, new_horizon: usize) -> WarmStart {
    let n = previous.horizon();
    if steps_elapsed >= n {
        return WarmStart { inputs: vec![0.0; new_horizon], states: Vec::new(), costates: Vec::new() };
    }
    let inputs = pad_to(previous.u_seq[steps_elapsed..].to_vec(), new_horizon, 0.0);
    let states = pad_to(previous.x_pred[steps_elapsed + 1..].to_vec(), new_horizon, Vector4::zeros());
    let costates = pad_to(previous.costates[steps_elapsed..].to_vec(), new_horizon, Vector4::zeros());
    WarmStart { inputs, states, costates }
}

/// An optimal control problem family: model, cost, bounds and solver settings.
#[derive(Clone, Debug, PartialEq)]
pub struct Ocp<M, C> {
    pub model: M,
    pub cost: C,
    /// Weight `D` of the squared input change.
    pub input_change_weight: f64,
    pub discount: f64,
    pub input_limit: f64,
    pub position_limit: f64,
    pub settings: SolverSettings,
}

pub type PendulumOcp = Ocp<PendulumModel, PendulumCost>;

impl PendulumOcp {
    pub fn pendulum(model: PendulumParams, cost: StageCost, discount: f64, settings: SolverSettings) -> Self {
        Ocp {
            model: PendulumModel::new(model),
            cost: PendulumCost { cost, params: model },
            input_change_weight: cost.input_change_weight,
            discount,
            input_limit: INPUT_LIMIT,
            position_limit: POSITION_LIMIT,
            settings,
        }
    }
}

impl<M: PredictionModel, C: StateCost> Ocp<M, C> {
    /// Objective of the transcribed problem at a primal point, `x[0]` fixed.
    pub fn objective(&self, x: &[Vector4<f64>], u: &[f64], u_prev: f64, reference: f64) -> f64 {
        let mut total = 0.0;
        let mut weight = 1.0;
        let mut last = u_prev;
        for k in 0..u.len() {
            let du = u[k] - last;
            total += weight * (self.input_change_weight * du * du + self.cost.value(&x[k + 1], reference));
            last = u[k];
            weight *= self.discount;
        }
        total
    }

    /// Open-loop prediction from `x0` under `u`.
    pub fn simulate(&self, x0: &Vector4<f64>, u: &[f64]) -> Vec<Vector4<f64>> {
        let mut xs = Vec::with_capacity(u.len() + 1);
        xs.push(*x0);
        for &uk in u {
            let next = self.model.step(xs.last().unwrap(), uk);
            xs.push(next);
        }
        xs
    }
}

/// `(A_k, B_k)` along a trajectory.
pub fn linearize<M: PredictionModel>(
    model: &M,
    x_pred: &[Vector4<f64>],
    u_seq: &[f64],
) -> (Vec<Matrix4<f64>>, Vec<Vector4<f64>>) {
    u_seq
        .iter()
        .zip(x_pred)
        .map(|(&u, x)| {
            let (_, a, b) = model.jacobian(x, u);
            (a, b)
        })
        .unzip()
}

/// `(A, B)` at a steady state.
pub fn linearize_steady<M: PredictionModel>(model: &M, x_s: &Vector4<f64>, u_s: f64) -> (Matrix4<f64>, Vector4<f64>) {
    let (_, a, b) = model.jacobian(x_s, u_s);
    (a, b)
}

/// One row of the per-solve diagnostics log.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolveRecord {
    pub step: usize,
    pub horizon: usize,
    pub iterations: usize,
    pub kkt_residual: f64,
    pub solve_time: f64,
}

impl SolveRecord {
    pub fn new(step: usize, solution: &OcpSolution) -> Self {
        Self {
            step,
            horizon: solution.horizon(),
            iterations: solution.iterations,
            kkt_residual: solution.kkt_residual,
            solve_time: solution.solve_time,
        }
    }
}

pub fn write_diagnostics<W: Write>(records: &[SolveRecord], mut w: W) -> io::Result<()> {
    writeln!(w, "step,N,iterations,kkt_residual,solve_time")?;
    for r in records {
        writeln!(w, "{},{},{},{:e},{:e}", r.step, r.horizon, r.iterations, r.kkt_residual, r.solve_time)?;
    }
    Ok(())
}
