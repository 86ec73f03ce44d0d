//! Cart-pole ground truth: continuous dynamics, RK4 discretization, stage
//! cost, constraints and the episode lifecycle.

mod cost;
mod episode;

pub use cost::{kinetic_energy, potential_energy, total_energy, StageCost};
pub use episode::{
    sample_initial, sample_reference, Episode, EpisodeConfig, EpisodeSpec, StepOutcome,
};

use nalgebra::Vector4;
use serde::{Deserialize, Serialize};

use crate::dual::Real;

/// Cart position bound, |psi| <= 2.
pub const POSITION_LIMIT: f64 = 2.0;
/// Actuator bound, |u| <= 5.
pub const INPUT_LIMIT: f64 = 5.0;

/// Physical state `[psi, v, phi, omega]`; `phi = 0` is upright and is kept
/// unwrapped.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlantState {
    pub psi: f64,
    pub v: f64,
    pub phi: f64,
    pub omega: f64,
}

impl PlantState {
    pub const UPRIGHT: Self = Self::new(0.0, 0.0, 0.0, 0.0);

    pub const fn new(psi: f64, v: f64, phi: f64, omega: f64) -> Self {
        Self { psi, v, phi, omega }
    }

    pub fn to_vector(self) -> Vector4<f64> {
        Vector4::new(self.psi, self.v, self.phi, self.omega)
    }

    pub fn from_vector(x: &Vector4<f64>) -> Self {
        Self::new(x[0], x[1], x[2], x[3])
    }

    pub fn is_finite(&self) -> bool {
        self.psi.is_finite() && self.v.is_finite() && self.phi.is_finite() && self.omega.is_finite()
    }

    /// Steady state for a position reference.
    pub fn steady(psi_r: f64) -> Self {
        Self::new(psi_r, 0.0, 0.0, 0.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PendulumParams {
    /// Pendulum mass.
    pub m: f64,
    /// Total mass of cart and pendulum.
    #[serde(rename = "M")]
    pub total_mass: f64,
    pub g: f64,
    /// Half the pendulum length.
    pub l: f64,
    pub mu_c: f64,
    pub mu_p: f64,
    pub dt: f64,
}

impl PendulumParams {
    /// The simulated "true" system.
    pub fn plant() -> Self {
        Self { m: 0.1, total_mass: 1.1, g: 9.81, l: 0.25, mu_c: 0.01, mu_p: 0.001, dt: 0.04 }
    }

    /// The perturbed model used inside the MPC.
    pub fn mpc_model() -> Self {
        Self { m: 0.2, total_mass: 1.5, ..Self::plant() }
    }

    pub fn frictionless(self) -> Self {
        Self { mu_c: 0.0, mu_p: 0.0, ..self }
    }

    pub fn validate(&self) -> Result<(), String> {
        let ok = self.m > 0.0 && self.total_mass > self.m && self.l > 0.0 && self.dt > 0.0;
        let finite = [self.m, self.total_mass, self.g, self.l, self.mu_c, self.mu_p, self.dt]
            .iter()
            .all(|v| v.is_finite());
        if ok && finite {
            Ok(())
        } else {
            Err(format!("invalid pendulum parameters: {self:?}"))
        }
    }
}

/// Continuous-time vector field `(psi', v', phi', omega')`.
pub fn derivatives<T: Real>(x: &[T; 4], u: T, p: &PendulumParams) -> [T; 4] {
    let [_, v, phi, omega] = *x;
    let (s, c) = (phi.sin(), phi.cos());
    let k = 7.0 / 3.0;
    let num = (s * c).scale(p.m * p.g)
        - (u + (omega * omega * s).scale(p.m * p.l) - v.scale(p.mu_c)).scale(k)
        - (omega * c).scale(p.mu_p / p.l);
    let den = (c * c).scale(p.m) - T::cst(k * p.total_mass);
    let v_dot = num / den;
    let omega_dot =
        (s.scale(p.g) - v_dot * c - omega.scale(p.mu_p / (p.m * p.l))).scale(3.0 / (7.0 * p.l));
    [v, v_dot, omega, omega_dot]
}

/// One classical RK4 step of length `dt` with `u` held constant.
pub fn rk4_step<T: Real>(x: &[T; 4], u: T, p: &PendulumParams, dt: f64) -> [T; 4] {
    let axpy = |a: &[T; 4], k: &[T; 4], h: f64| -> [T; 4] {
        [a[0] + k[0].scale(h), a[1] + k[1].scale(h), a[2] + k[2].scale(h), a[3] + k[3].scale(h)]
    };
    let k1 = derivatives(x, u, p);
    let k2 = derivatives(&axpy(x, &k1, 0.5 * dt), u, p);
    let k3 = derivatives(&axpy(x, &k2, 0.5 * dt), u, p);
    let k4 = derivatives(&axpy(x, &k3, dt), u, p);
    let mut out = *x;
    for i in 0..4 {
        out[i] = x[i] + (k1[i] + k2[i].scale(2.0) + k3[i].scale(2.0) + k4[i]).scale(dt / 6.0);
    }
    out
}

/// Advance the plant one control period.
pub fn step(state: &PlantState, u: f64, p: &PendulumParams) -> PlantState {
    let x = [state.psi, state.v, state.phi, state.omega];
    let [psi, v, phi, omega] = rk4_step(&x, u, p, p.dt);
    PlantState { psi, v, phi, omega }
}

/// True iff the cart is outside `[-2, 2]`.
pub fn position_violated(state: &PlantState) -> bool {
    state.psi.abs() > POSITION_LIMIT
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ConstraintStatus {
    Ok,
    PositionViolation,
}

pub fn check_constraints(state: &PlantState, _u: f64) -> ConstraintStatus {
    if position_violated(state) {
        ConstraintStatus::PositionViolation
    } else {
        ConstraintStatus::Ok
    }
}

pub fn clamp_input(u: f64) -> f64 {
    u.clamp(-INPUT_LIMIT, INPUT_LIMIT)
}
