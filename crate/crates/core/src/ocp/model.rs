use nalgebra::{Matrix4, Matrix5, Vector4, Vector5};

use crate::dual::Dual;
use crate::plant::{rk4_step, PendulumParams, PlantState, StageCost};

/// Discrete-time prediction model `x+ = F(x, u)` as seen by the transcription.
pub trait PredictionModel {
    fn step(&self, x: &Vector4<f64>, u: f64) -> Vector4<f64>;

    /// `(F(x,u), dF/dx, dF/du)`.
    fn jacobian(&self, x: &Vector4<f64>, u: f64) -> (Vector4<f64>, Matrix4<f64>, Vector4<f64>);

    /// Hessian of `lam' F` over `(x, u)`, by forward differences of the
    /// transposed Jacobian.
    fn adjoint_hessian(&self, x: &Vector4<f64>, u: f64, lam: &Vector4<f64>) -> Matrix5<f64> {
        let adjoint = |x: &Vector4<f64>, u: f64| -> Vector5<f64> {
            let (_, a, b) = self.jacobian(x, u);
            let ax = a.transpose() * lam;
            Vector5::new(ax[0], ax[1], ax[2], ax[3], b.dot(lam))
        };
        let g0 = adjoint(x, u);
        let mut h = Matrix5::zeros();
        for i in 0..5 {
            let mut xp = *x;
            let mut up = u;
            let step = if i < 4 {
                let s = 1.5e-8 * xp[i].abs().max(1.0);
                xp[i] += s;
                s
            } else {
                let s = 1.5e-8 * u.abs().max(1.0);
                up += s;
                s
            };
            h.set_column(i, &((adjoint(&xp, up) - g0) / step));
        }
        (h + h.transpose()) * 0.5
    }
}

/// The cart-pole integrated with one RK4 step per interval.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PendulumModel {
    pub params: PendulumParams,
}

impl PendulumModel {
    pub fn new(params: PendulumParams) -> Self {
        Self { params }
    }
}

impl PredictionModel for PendulumModel {
    fn step(&self, x: &Vector4<f64>, u: f64) -> Vector4<f64> {
        let y = rk4_step(&[x[0], x[1], x[2], x[3]], u, &self.params, self.params.dt);
        Vector4::from(y)
    }

    fn jacobian(&self, x: &Vector4<f64>, u: f64) -> (Vector4<f64>, Matrix4<f64>, Vector4<f64>) {
        let xd = [
            Dual::<5>::variable(x[0], 0),
            Dual::variable(x[1], 1),
            Dual::variable(x[2], 2),
            Dual::variable(x[3], 3),
        ];
        let y = rk4_step(&xd, Dual::variable(u, 4), &self.params, self.params.dt);
        let mut f = Vector4::zeros();
        let mut a = Matrix4::zeros();
        let mut b = Vector4::zeros();
        for i in 0..4 {
            f[i] = y[i].re;
            for j in 0..4 {
                a[(i, j)] = y[i].eps[j];
            }
            b[i] = y[i].eps[4];
        }
        (f, a, b)
    }
}

/// `x+ = A x + B u`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LinearModel {
    pub a: Matrix4<f64>,
    pub b: Vector4<f64>,
}

impl PredictionModel for LinearModel {
    fn step(&self, x: &Vector4<f64>, u: f64) -> Vector4<f64> {
        self.a * x + self.b * u
    }

    fn jacobian(&self, x: &Vector4<f64>, u: f64) -> (Vector4<f64>, Matrix4<f64>, Vector4<f64>) {
        (self.step(x, u), self.a, self.b)
    }

    fn adjoint_hessian(&self, _: &Vector4<f64>, _: f64, _: &Vector4<f64>) -> Matrix5<f64> {
        Matrix5::zeros()
    }
}

/// State-dependent part of the stage cost, with its derivatives.
pub trait StateCost {
    fn value(&self, x: &Vector4<f64>, reference: f64) -> f64;
    fn gradient(&self, x: &Vector4<f64>, reference: f64) -> Vector4<f64>;
    fn hessian(&self, x: &Vector4<f64>, reference: f64) -> Matrix4<f64>;
}

/// Energy/position stage cost evaluated with a given set of physical parameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PendulumCost {
    pub cost: StageCost,
    pub params: PendulumParams,
}

impl StateCost for PendulumCost {
    fn value(&self, x: &Vector4<f64>, reference: f64) -> f64 {
        self.cost.state_cost(&PlantState::from_vector(x), reference, &self.params)
    }

    fn gradient(&self, x: &Vector4<f64>, reference: f64) -> Vector4<f64> {
        self.cost.state_gradient(&PlantState::from_vector(x), reference, &self.params)
    }

    fn hessian(&self, x: &Vector4<f64>, _reference: f64) -> Matrix4<f64> {
        self.cost.state_hessian(&PlantState::from_vector(x), &self.params)
    }
}

/// `(x - x_r)' Q (x - x_r)` with `x_r = [reference, 0, 0, 0]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QuadraticCost {
    pub q: Matrix4<f64>,
}

impl QuadraticCost {
    fn error(x: &Vector4<f64>, reference: f64) -> Vector4<f64> {
        x - Vector4::new(reference, 0.0, 0.0, 0.0)
    }
}

impl StateCost for QuadraticCost {
    fn value(&self, x: &Vector4<f64>, reference: f64) -> f64 {
        let e = Self::error(x, reference);
        e.dot(&(self.q * e))
    }

    fn gradient(&self, x: &Vector4<f64>, reference: f64) -> Vector4<f64> {
        (self.q + self.q.transpose()) * Self::error(x, reference)
    }

    fn hessian(&self, _x: &Vector4<f64>, _reference: f64) -> Matrix4<f64> {
        self.q + self.q.transpose()
    }
}
