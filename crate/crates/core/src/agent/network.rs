//! Fully connected Q-network: ReLU hidden layers, linear head, hand-written
//! backpropagation for the one-step TD loss.

use rand::Rng;
use serde::{Deserialize, Serialize};

/// One affine layer. `weights` is `inputs x outputs`, row-major by input, so
/// the inner loops of both passes run over contiguous output slices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            inputs,
            outputs,
            weights: vec![0.0; inputs * outputs],
            bias: vec![0.0; outputs],
        }
    }

    /// He-uniform weights, zero bias.
    pub fn random<R: Rng>(inputs: usize, outputs: usize, rng: &mut R) -> Self {
        let limit = (6.0 / inputs as f64).sqrt();
        let weights = (0..inputs * outputs).map(|_| rng.gen_range(-limit..limit)).collect();
        Self {
            inputs,
            outputs,
            weights,
            bias: vec![0.0; outputs],
        }
    }

    pub fn weight(&self, input: usize, output: usize) -> f64 {
        self.weights[input * self.outputs + output]
    }

    /// `out[b] = bias + x[b] W` for a row-major batch.
    fn forward_batch(&self, x: &[f64], batch: usize, relu: bool) -> Vec<f64> {
        let (n_in, n_out) = (self.inputs, self.outputs);
        let mut out = Vec::with_capacity(batch * n_out);
        for b in 0..batch {
            out.extend_from_slice(&self.bias);
            let row_out = &mut out[b * n_out..(b + 1) * n_out];
            for (i, &xi) in x[b * n_in..(b + 1) * n_in].iter().enumerate() {
                if xi == 0.0 {
                    continue;
                }
                let w = &self.weights[i * n_out..(i + 1) * n_out];
                for (o, wv) in row_out.iter_mut().zip(w) {
                    *o += xi * wv;
                }
            }
            if relu {
                for o in row_out.iter_mut() {
                    *o = o.max(0.0);
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QNetwork {
    pub layers: Vec<Dense>,
}

impl QNetwork {
    pub fn random<R: Rng>(inputs: usize, hidden: &[usize], outputs: usize, rng: &mut R) -> Self {
        let sizes = sizes(inputs, hidden, outputs);
        let layers = sizes.windows(2).map(|w| Dense::random(w[0], w[1], rng)).collect();
        Self { layers }
    }

    pub fn zeros(inputs: usize, hidden: &[usize], outputs: usize) -> Self {
        let sizes = sizes(inputs, hidden, outputs);
        Self {
            layers: sizes.windows(2).map(|w| Dense::zeros(w[0], w[1])).collect(),
        }
    }

    /// Same architecture, all parameters zero.
    pub fn zeros_like(&self) -> Self {
        Self {
            layers: self.layers.iter().map(|l| Dense::zeros(l.inputs, l.outputs)).collect(),
        }
    }

    pub fn input_size(&self) -> usize {
        self.layers.first().map_or(0, |l| l.inputs)
    }

    pub fn output_size(&self) -> usize {
        self.layers.last().map_or(0, |l| l.outputs)
    }

    pub fn hidden_sizes(&self) -> Vec<usize> {
        self.layers[..self.layers.len().saturating_sub(1)].iter().map(|l| l.outputs).collect()
    }

    pub fn forward(&self, input: &[f64]) -> Vec<f64> {
        self.forward_batch(input, 1)
    }

    pub fn forward_batch(&self, inputs: &[f64], batch: usize) -> Vec<f64> {
        let last = self.layers.len() - 1;
        let mut act = inputs.to_vec();
        for (k, layer) in self.layers.iter().enumerate() {
            act = layer.forward_batch(&act, batch, k < last);
        }
        act
    }

    /// Activations of every layer, input first.
    fn activations(&self, inputs: &[f64], batch: usize) -> Vec<Vec<f64>> {
        let last = self.layers.len() - 1;
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(inputs.to_vec());
        for (k, layer) in self.layers.iter().enumerate() {
            let next = layer.forward_batch(acts.last().unwrap(), batch, k < last);
            acts.push(next);
        }
        acts
    }

    /// Mean squared TD error on the taken actions and its gradient:
    /// `L = (1/B) sum_b (Q(x_b)[a_b] - y_b)^2`.
    pub fn td_loss_and_grad(&self, inputs: &[f64], actions: &[usize], targets: &[f64]) -> (f64, QNetwork) {
        let batch = actions.len();
        let acts = self.activations(inputs, batch);
        let q = acts.last().unwrap();
        let n_out = self.output_size();

        let mut loss = 0.0;
        let mut delta = vec![0.0; batch * n_out];
        for b in 0..batch {
            let err = q[b * n_out + actions[b]] - targets[b];
            loss += err * err;
            delta[b * n_out + actions[b]] = 2.0 * err / batch as f64;
        }
        loss /= batch as f64;

        let mut grad = self.zeros_like();
        for k in (0..self.layers.len()).rev() {
            let layer = &self.layers[k];
            let g = &mut grad.layers[k];
            let (n_in, n_out) = (layer.inputs, layer.outputs);
            let prev = &acts[k];
            for b in 0..batch {
                let d = &delta[b * n_out..(b + 1) * n_out];
                for (gb, dv) in g.bias.iter_mut().zip(d) {
                    *gb += dv;
                }
                for (i, &a) in prev[b * n_in..(b + 1) * n_in].iter().enumerate() {
                    if a == 0.0 {
                        continue;
                    }
                    let gw = &mut g.weights[i * n_out..(i + 1) * n_out];
                    for (w, dv) in gw.iter_mut().zip(d) {
                        *w += a * dv;
                    }
                }
            }
            if k == 0 {
                break;
            }
            // ReLU derivative: 1 where the stored activation is positive.
            let mut prev_delta = vec![0.0; batch * n_in];
            for b in 0..batch {
                let d = &delta[b * n_out..(b + 1) * n_out];
                for i in 0..n_in {
                    if prev[b * n_in + i] > 0.0 {
                        prev_delta[b * n_in + i] = dot(&layer.weights[i * n_out..(i + 1) * n_out], d);
                    }
                }
            }
            delta = prev_delta;
        }
        (loss, grad)
    }

    /// `self -= lr * grad`.
    pub fn sgd_step(&mut self, grad: &QNetwork, lr: f64) {
        for (l, g) in self.layers.iter_mut().zip(&grad.layers) {
            for (w, gw) in l.weights.iter_mut().zip(&g.weights) {
                *w -= lr * gw;
            }
            for (b, gb) in l.bias.iter_mut().zip(&g.bias) {
                *b -= lr * gb;
            }
        }
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    /// Parameters in a fixed order: per layer, weights then biases.
    pub fn params(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(&l.bias).copied())
            .collect()
    }

    pub fn set_params(&mut self, params: &[f64]) {
        let mut it = params.iter().copied();
        for l in &mut self.layers {
            for w in l.weights.iter_mut().chain(l.bias.iter_mut()) {
                *w = it.next().expect("parameter count matches");
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().chain(&l.bias).all(|v| v.is_finite()))
    }
}

fn sizes(inputs: usize, hidden: &[usize], outputs: usize) -> Vec<usize> {
    std::iter::once(inputs)
        .chain(hidden.iter().copied())
        .chain(std::iter::once(outputs))
        .collect()
}

/// Dot product with four independent accumulators.
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let chunks = a.len() / 4;
    for c in 0..chunks {
        for j in 0..4 {
            acc[j] += a[c * 4 + j] * b[c * 4 + j];
        }
    }
    let mut sum = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for j in chunks * 4..a.len() {
        sum += a[j] * b[j];
    }
    sum
}
