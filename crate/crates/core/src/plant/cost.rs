use nalgebra::{Matrix4, Vector4};
use serde::{Deserialize, Serialize};

use super::{PendulumParams, PlantState};

/// Ratio of the pendulum's pivot inertia to `m l^2` implied by the vector field.
const INERTIA_FACTOR: f64 = 7.0 / 3.0;

/// Kinetic energy of the cart-pole, including the cart/pendulum coupling term
/// that the equations of motion imply.
pub fn kinetic_energy(x: &PlantState, p: &PendulumParams) -> f64 {
    let ml = p.m * p.l;
    0.5 * p.total_mass * x.v * x.v
        + ml * x.v * x.omega * x.phi.cos()
        + 0.5 * INERTIA_FACTOR * ml * p.l * x.omega * x.omega
}

/// Potential energy relative to the upright position, where it is maximal (zero).
pub fn potential_energy(x: &PlantState, p: &PendulumParams) -> f64 {
    p.m * p.g * p.l * (x.phi.cos() - 1.0)
}

pub fn total_energy(x: &PlantState, p: &PendulumParams) -> f64 {
    kinetic_energy(x, p) + potential_energy(x, p)
}

/// `E_k - w_e E_p + w_psi (psi - psi_r)^2 + D (u - u_prev)^2`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageCost {
    pub energy_weight: f64,
    pub position_weight: f64,
    /// Input-change weight `D`.
    pub input_change_weight: f64,
}

impl Default for StageCost {
    fn default() -> Self {
        Self { energy_weight: 10.0, position_weight: 10.0, input_change_weight: 0.1 }
    }
}

impl StageCost {
    pub fn state_cost(&self, x: &PlantState, psi_r: f64, p: &PendulumParams) -> f64 {
        let e = x.psi - psi_r;
        kinetic_energy(x, p) - self.energy_weight * potential_energy(x, p)
            + self.position_weight * e * e
    }

    pub fn input_change_cost(&self, u: f64, u_prev: f64) -> f64 {
        let du = u - u_prev;
        self.input_change_weight * du * du
    }

    pub fn value(&self, x: &PlantState, u: f64, u_prev: f64, psi_r: f64, p: &PendulumParams) -> f64 {
        self.state_cost(x, psi_r, p) + self.input_change_cost(u, u_prev)
    }

    /// Gradient of the state part with respect to `[psi, v, phi, omega]`.
    pub fn state_gradient(&self, x: &PlantState, psi_r: f64, p: &PendulumParams) -> Vector4<f64> {
        let ml = p.m * p.l;
        let (s, c) = x.phi.sin_cos();
        Vector4::new(
            2.0 * self.position_weight * (x.psi - psi_r),
            p.total_mass * x.v + ml * x.omega * c,
            -ml * x.v * x.omega * s + self.energy_weight * p.m * p.g * p.l * s,
            ml * x.v * c + INERTIA_FACTOR * ml * p.l * x.omega,
        )
    }

    pub fn state_hessian(&self, x: &PlantState, p: &PendulumParams) -> Matrix4<f64> {
        let ml = p.m * p.l;
        let (s, c) = x.phi.sin_cos();
        let mut h = Matrix4::zeros();
        h[(0, 0)] = 2.0 * self.position_weight;
        h[(1, 1)] = p.total_mass;
        h[(1, 2)] = -ml * x.omega * s;
        h[(1, 3)] = ml * c;
        h[(2, 2)] = -ml * x.v * x.omega * c + self.energy_weight * p.m * p.g * p.l * c;
        h[(2, 3)] = -ml * x.v * s;
        h[(3, 3)] = INERTIA_FACTOR * ml * p.l;
        h[(2, 1)] = h[(1, 2)];
        h[(3, 1)] = h[(1, 3)];
        h[(3, 2)] = h[(2, 3)];
        h
    }
}
