use serde::{Deserialize, Serialize};

/// Adam with bias correction over one flat parameter vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub step: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl Adam {
    pub fn new(dim: usize, learning_rate: f64, epsilon: f64) -> Self {
        Self { learning_rate, beta1: 0.9, beta2: 0.999, epsilon, step: 0, m: vec![0.0; dim], v: vec![0.0; dim] }
    }

    /// Descent step on `params` along `grad`, skipping entries where `mask` is false.
    pub fn update(&mut self, params: &mut [f64], grad: &[f64], mask: &[bool]) {
        assert!(params.len() == self.m.len() && grad.len() == self.m.len() && mask.len() == self.m.len());
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step as i32);
        let c2 = 1.0 - self.beta2.powi(self.step as i32);
        for i in 0..params.len() {
            if !mask[i] {
                continue;
            }
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            params[i] -= self.learning_rate * m_hat / (v_hat.sqrt() + self.epsilon);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut adam = Adam::new(2, 0.1, 1e-12);
        let mut p = vec![1.0, 1.0];
        adam.update(&mut p, &[3.0, -0.5], &[true, true]);
        assert!((p[0] - 0.9).abs() < 1e-12);
        assert!((p[1] - 1.1).abs() < 1e-12);
    }

    #[test]
    fn masked_entries_stay() {
        let mut adam = Adam::new(2, 0.1, 1e-8);
        let mut p = vec![1.0, 1.0];
        adam.update(&mut p, &[3.0, 3.0], &[true, false]);
        assert_eq!(p[1], 1.0);
        assert_eq!(adam.m[1], 0.0);
    }

    #[test]
    fn minimizes_quadratic() {
        let mut adam = Adam::new(1, 0.05, 1e-8);
        let mut p = vec![3.0];
        for _ in 0..2000 {
            let g = [2.0 * (p[0] - 1.0)];
            adam.update(&mut p, &g, &[true]);
        }
        assert!((p[0] - 1.0).abs() < 1e-3);
    }
}
