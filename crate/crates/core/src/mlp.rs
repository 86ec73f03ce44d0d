//! Dense feed-forward networks with tanh hidden layers and a linear output,
//! plus a running input standardizer.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MlpError {
    #[error("expected input of dimension {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("expected {expected} parameters, got {got}")]
    ParameterCount { expected: usize, got: usize },
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    /// `out x in`.
    pub weight: DMatrix<f64>,
    pub bias: DVector<f64>,
}

impl Dense {
    pub fn zeros(input: usize, output: usize) -> Self {
        Self { weight: DMatrix::zeros(output, input), bias: DVector::zeros(output) }
    }

    fn num_params(&self) -> usize {
        self.weight.len() + self.bias.len()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Dense>,
}

/// Activations of one forward pass, `activations[0]` being the input.
#[derive(Clone, Debug, PartialEq)]
pub struct ForwardCache {
    activations: Vec<DVector<f64>>,
}

impl ForwardCache {
    pub fn output(&self) -> &DVector<f64> {
        self.activations.last().unwrap()
    }
}

fn orthogonal<R: Rng + ?Sized>(rows: usize, cols: usize, gain: f64, rng: &mut R) -> DMatrix<f64> {
    let (tall, short) = (rows.max(cols), rows.min(cols));
    let g = DMatrix::from_fn(tall, short, |_, _| rng.sample::<f64, _>(StandardNormal));
    let qr = g.qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..short {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    let w = if rows >= cols { q } else { q.transpose() };
    w * gain
}

impl Mlp {
    /// All-zero network with the given layer sizes (input first).
    pub fn zeros(sizes: &[usize]) -> Self {
        assert!(sizes.len() >= 2, "need at least an input and an output size");
        Self { layers: sizes.windows(2).map(|w| Dense::zeros(w[0], w[1])).collect() }
    }

    /// Orthogonal weights (gain `sqrt(2)` hidden, `output_gain` last), zero biases.
    pub fn init<R: Rng + ?Sized>(sizes: &[usize], output_gain: f64, rng: &mut R) -> Self {
        let mut net = Self::zeros(sizes);
        let last = net.layers.len() - 1;
        for (i, layer) in net.layers.iter_mut().enumerate() {
            let gain = if i == last { output_gain } else { 2f64.sqrt() };
            let (rows, cols) = layer.weight.shape();
            layer.weight = orthogonal(rows, cols, gain, rng);
        }
        net
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weight.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().unwrap().weight.nrows()
    }

    pub fn sizes(&self) -> Vec<usize> {
        std::iter::once(self.input_dim()).chain(self.layers.iter().map(|l| l.weight.nrows())).collect()
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(Dense::num_params).sum()
    }

    /// Per layer: weights in column-major order, then biases.
    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for l in &self.layers {
            out.extend_from_slice(l.weight.as_slice());
            out.extend_from_slice(l.bias.as_slice());
        }
        out
    }

    pub fn set_params(&mut self, values: &[f64]) -> Result<(), MlpError> {
        if values.len() != self.num_params() {
            return Err(MlpError::ParameterCount { expected: self.num_params(), got: values.len() });
        }
        let mut offset = 0;
        for l in &mut self.layers {
            let nw = l.weight.len();
            l.weight.as_mut_slice().copy_from_slice(&values[offset..offset + nw]);
            offset += nw;
            let nb = l.bias.len();
            l.bias.as_mut_slice().copy_from_slice(&values[offset..offset + nb]);
            offset += nb;
        }
        Ok(())
    }

    pub fn forward_cached(&self, input: &[f64]) -> Result<ForwardCache, MlpError> {
        if input.len() != self.input_dim() {
            return Err(MlpError::Dimension { expected: self.input_dim(), got: input.len() });
        }
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        activations.push(DVector::from_column_slice(input));
        let last = self.layers.len() - 1;
        for (i, l) in self.layers.iter().enumerate() {
            let mut z = &l.weight * activations.last().unwrap() + &l.bias;
            if i < last {
                z.apply(|v| *v = v.tanh());
            }
            activations.push(z);
        }
        Ok(ForwardCache { activations })
    }

    pub fn forward(&self, input: &[f64]) -> Result<DVector<f64>, MlpError> {
        Ok(self.forward_cached(input)?.activations.pop().unwrap())
    }

    /// Adds `scale * d(output . output_grad)/dparams` into `grad` (layout of
    /// `params()`) and returns the gradient with respect to the input.
    pub fn backward_into(&self, cache: &ForwardCache, output_grad: &[f64], scale: f64, grad: &mut [f64]) -> DVector<f64> {
        assert_eq!(grad.len(), self.num_params());
        assert_eq!(output_grad.len(), self.output_dim());
        let mut offsets = Vec::with_capacity(self.layers.len());
        let mut offset = 0;
        for l in &self.layers {
            offsets.push(offset);
            offset += l.num_params();
        }
        let mut delta = DVector::from_column_slice(output_grad);
        for (i, l) in self.layers.iter().enumerate().rev() {
            let x = &cache.activations[i];
            let start = offsets[i];
            let (rows, cols) = l.weight.shape();
            for c in 0..cols {
                let xc = x[c] * scale;
                if xc == 0.0 {
                    continue;
                }
                let col = &mut grad[start + c * rows..start + (c + 1) * rows];
                for (g, d) in col.iter_mut().zip(delta.iter()) {
                    *g += d * xc;
                }
            }
            let bias = &mut grad[start + rows * cols..start + rows * cols + rows];
            for (g, d) in bias.iter_mut().zip(delta.iter()) {
                *g += d * scale;
            }
            let mut back = l.weight.tr_mul(&delta);
            if i > 0 {
                back.zip_apply(x, |b, a| *b *= 1.0 - a * a);
            }
            delta = back;
        }
        delta
    }

    /// Parameter and input gradients of `output . output_grad`.
    pub fn backward(&self, cache: &ForwardCache, output_grad: &[f64]) -> (Vec<f64>, DVector<f64>) {
        let mut grad = vec![0.0; self.num_params()];
        let input_grad = self.backward_into(cache, output_grad, 1.0, &mut grad);
        (grad, input_grad)
    }

    /// Overwrite the output bias, leaving every weight untouched.
    pub fn set_output_bias(&mut self, bias: &[f64]) {
        self.layers.last_mut().unwrap().bias.copy_from_slice(bias);
    }
}

/// Per-feature running mean/variance (Welford) that stops updating after
/// `freeze_after` samples.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunningNormalizer {
    pub count: u64,
    pub mean: Vec<f64>,
    pub m2: Vec<f64>,
    pub freeze_after: u64,
}

impl RunningNormalizer {
    pub fn new(dim: usize, freeze_after: u64) -> Self {
        Self { count: 0, mean: vec![0.0; dim], m2: vec![0.0; dim], freeze_after }
    }

    pub fn is_frozen(&self) -> bool {
        self.count >= self.freeze_after
    }

    pub fn update(&mut self, x: &[f64]) {
        if self.is_frozen() {
            return;
        }
        self.count += 1;
        let n = self.count as f64;
        for ((m, s), &v) in self.mean.iter_mut().zip(&mut self.m2).zip(x) {
            let d = v - *m;
            *m += d / n;
            *s += d * (v - *m);
        }
    }

    pub fn std(&self) -> Vec<f64> {
        self.m2
            .iter()
            .map(|s| if self.count > 1 { (s / (self.count - 1) as f64).sqrt().max(1e-6) } else { 1.0 })
            .collect()
    }

    pub fn normalize(&self, x: &[f64]) -> Vec<f64> {
        let std = self.std();
        x.iter().zip(&self.mean).zip(&std).map(|((v, m), s)| ((v - m) / s).clamp(-10.0, 10.0)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_weights_output_bias() {
        let mut net = Mlp::zeros(&[3, 5, 2]);
        net.set_output_bias(&[0.7, -1.2]);
        let y = net.forward(&[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(y.as_slice(), &[0.7, -1.2]);
    }

    #[test]
    fn single_layer_is_affine() {
        let mut net = Mlp::zeros(&[2, 2]);
        net.set_params(&[1.0, 2.0, 3.0, 4.0, 0.5, -0.5]).unwrap();
        let y = net.forward(&[1.0, -1.0]).unwrap();
        // column-major W = [[1, 3], [2, 4]]
        assert_eq!(y.as_slice(), &[1.0 - 3.0 + 0.5, 2.0 - 4.0 - 0.5]);
        let cache = net.forward_cached(&[1.0, -1.0]).unwrap();
        let (g, gi) = net.backward(&cache, &[2.0, 3.0]);
        assert_eq!(g, vec![2.0, 3.0, -2.0, -3.0, 2.0, 3.0]);
        assert_eq!(gi.as_slice(), &[1.0 * 2.0 + 2.0 * 3.0, 3.0 * 2.0 + 4.0 * 3.0]);
    }

    #[test]
    fn wrong_input_dimension() {
        let net = Mlp::zeros(&[3, 2]);
        assert_eq!(net.forward(&[1.0]).unwrap_err(), MlpError::Dimension { expected: 3, got: 1 });
    }

    #[test]
    fn orthogonal_rows_or_columns() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let net = Mlp::init(&[14, 64, 3], 1.0, &mut rng);
        let w0 = &net.layers[0].weight / 2f64.sqrt();
        assert!((w0.transpose() * &w0 - DMatrix::identity(14, 14)).amax() < 1e-12);
        let w1 = &net.layers[1].weight;
        assert!((w1 * w1.transpose() - DMatrix::identity(3, 3)).amax() < 1e-12);
        assert!(net.layers.iter().all(|l| l.bias.iter().all(|&b| b == 0.0)));
    }

    #[test]
    fn saturated_tanh_blocks_gradient() {
        let mut net = Mlp::zeros(&[1, 1, 1]);
        net.set_params(&[1.0, 0.0, 1.0, 0.0]).unwrap();
        let cache = net.forward_cached(&[50.0]).unwrap();
        let (_, gi) = net.backward(&cache, &[1.0]);
        assert!(gi[0].abs() < 1e-30);
    }

    #[test]
    fn normalizer_freezes() {
        let mut n = RunningNormalizer::new(1, 3);
        for v in [1.0, 2.0, 3.0, 100.0] {
            n.update(&[v]);
        }
        assert_eq!(n.count, 3);
        assert!((n.mean[0] - 2.0).abs() < 1e-15);
        assert!((n.std()[0] - 1.0).abs() < 1e-15);
        assert_eq!(n.normalize(&[4.0]), vec![2.0]);
    }
}
