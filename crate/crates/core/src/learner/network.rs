use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use super::Transition;
use crate::{Error, Result};

/// Fully connected layer with row-major `outputs × inputs` weights.
#[derive(Debug, Clone, PartialEq)]
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

    fn forward_into(&self, input: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.extend(
            self.weights
                .chunks_exact(self.inputs)
                .zip(&self.bias)
                .map(|(row, b)| row.iter().zip(input).map(|(w, x)| w * x).sum::<f64>() + b),
        );
    }
}

/// Q-network: rectifier hidden layers, identity output layer.
#[derive(Debug, Clone, PartialEq)]
pub struct QNetwork {
    layers: Vec<Dense>,
}

/// Parameter gradients laid out like the network's layers.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<Dense>,
}

impl Gradients {
    pub fn norm(&self) -> f64 {
        let sq: f64 = self
            .layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(&l.bias))
            .map(|g| g * g)
            .sum();
        libm::sqrt(sq)
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(&l.bias).copied())
            .collect()
    }

    fn scale(&mut self, factor: f64) {
        for l in &mut self.layers {
            l.weights
                .iter_mut()
                .chain(l.bias.iter_mut())
                .for_each(|g| *g *= factor);
        }
    }
}

#[derive(Debug, Clone)]
pub struct TdLoss {
    pub loss: f64,
    pub gradients: Gradients,
}

/// Index of the largest value; ties resolve to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

impl QNetwork {
    /// Layers sized by `sizes` (input, hidden..., output), weights and biases
    /// uniform in ±1/√fan_in.
    pub fn new<R: Rng + ?Sized>(sizes: &[usize], rng: &mut R) -> Self {
        let mut net = Self::zeros(sizes);
        for layer in &mut net.layers {
            let bound = 1.0 / libm::sqrt(layer.inputs as f64);
            for p in layer.weights.iter_mut().chain(layer.bias.iter_mut()) {
                *p = rng.random_range(-bound..=bound);
            }
        }
        net
    }

    pub fn zeros(sizes: &[usize]) -> Self {
        assert!(sizes.len() >= 2, "a network needs input and output sizes");
        Self {
            layers: sizes.windows(2).map(|w| Dense::zeros(w[0], w[1])).collect(),
        }
    }

    pub fn from_layers(layers: Vec<Dense>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Config("network has no layers".into()));
        }
        for l in &layers {
            if l.weights.len() != l.inputs * l.outputs || l.bias.len() != l.outputs {
                return Err(Error::Config(
                    "layer parameter count does not match its shape".into(),
                ));
            }
        }
        for pair in layers.windows(2) {
            if pair[0].outputs != pair[1].inputs {
                return Err(Error::DimensionMismatch {
                    expected: pair[0].outputs,
                    got: pair[1].inputs,
                });
            }
        }
        Ok(Self { layers })
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut sizes = vec![self.layers[0].inputs];
        sizes.extend(self.layers.iter().map(|l| l.outputs));
        sizes
    }

    pub fn input_len(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn output_len(&self) -> usize {
        self.layers[self.layers.len() - 1].outputs
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().chain(&l.bias).all(|p| p.is_finite()))
    }

    pub fn params(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(&l.bias).copied())
            .collect()
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        let expected: usize = self
            .layers
            .iter()
            .map(|l| l.weights.len() + l.bias.len())
            .sum();
        if params.len() != expected {
            return Err(Error::DimensionMismatch {
                expected,
                got: params.len(),
            });
        }
        let mut it = params.iter();
        for l in &mut self.layers {
            for p in l.weights.iter_mut().chain(l.bias.iter_mut()) {
                *p = *it.next().unwrap();
            }
        }
        Ok(())
    }

    fn check_input(&self, input: &[f64]) -> Result<()> {
        if input.len() != self.input_len() {
            return Err(Error::DimensionMismatch {
                expected: self.input_len(),
                got: input.len(),
            });
        }
        Ok(())
    }

    pub fn q_values(&self, input: &[f64]) -> Result<Vec<f64>> {
        self.check_input(input)?;
        let mut cur = input.to_vec();
        let mut next = Vec::new();
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            layer.forward_into(&cur, &mut next);
            if i < last {
                next.iter_mut().for_each(|v| *v = v.max(0.0));
            }
            core::mem::swap(&mut cur, &mut next);
        }
        Ok(cur)
    }

    pub fn greedy_action(&self, input: &[f64]) -> Result<usize> {
        Ok(argmax(&self.q_values(input)?))
    }

    /// Layer inputs (post-activation) and pre-activations for one sample.
    fn forward_trace(&self, input: &[f64]) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        let mut activations = vec![input.to_vec()];
        let mut pre = Vec::with_capacity(self.layers.len());
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let mut z = Vec::new();
            layer.forward_into(&activations[i], &mut z);
            let a = if i < last {
                z.iter().map(|v| v.max(0.0)).collect()
            } else {
                z.clone()
            };
            pre.push(z);
            activations.push(a);
        }
        (activations, pre)
    }

    /// Mean squared TD error of `batch` against `r + γ·max Q_target(s')`
    /// (just `r` on terminal transitions) and its gradient.
    pub fn td_loss(&self, target: &QNetwork, batch: &[&Transition], gamma: f64) -> Result<TdLoss> {
        if batch.is_empty() {
            return Err(Error::EmptyBatch);
        }
        let mut grads = Gradients {
            layers: self
                .layers
                .iter()
                .map(|l| Dense::zeros(l.inputs, l.outputs))
                .collect(),
        };
        let n = batch.len() as f64;
        let mut loss = 0.0;
        for t in batch {
            self.check_input(t.obs.values())?;
            let outputs = self.output_len();
            if t.action >= outputs {
                return Err(Error::InvalidAction {
                    action: t.action,
                    count: outputs,
                });
            }
            let y = if t.terminal {
                t.reward
            } else {
                let next = target.q_values(t.next_obs.values())?;
                t.reward + gamma * next[argmax(&next)]
            };
            let (acts, pre) = self.forward_trace(t.obs.values());
            let q = acts[acts.len() - 1][t.action];
            let err = q - y;
            loss += err * err / n;

            let mut delta = vec![0.0; outputs];
            delta[t.action] = 2.0 * err / n;
            for l in (0..self.layers.len()).rev() {
                let layer = &self.layers[l];
                let g = &mut grads.layers[l];
                let input = &acts[l];
                for (o, d) in delta.iter().enumerate() {
                    if *d == 0.0 {
                        continue;
                    }
                    g.bias[o] += d;
                    let row = &mut g.weights[o * layer.inputs..(o + 1) * layer.inputs];
                    row.iter_mut().zip(input).for_each(|(gw, x)| *gw += d * x);
                }
                if l > 0 {
                    let mut prev = vec![0.0; layer.inputs];
                    for (o, d) in delta.iter().enumerate() {
                        if *d == 0.0 {
                            continue;
                        }
                        let row = &layer.weights[o * layer.inputs..(o + 1) * layer.inputs];
                        prev.iter_mut().zip(row).for_each(|(p, w)| *p += d * w);
                    }
                    for (p, z) in prev.iter_mut().zip(&pre[l - 1]) {
                        if *z <= 0.0 {
                            *p = 0.0;
                        }
                    }
                    delta = prev;
                }
            }
        }
        Ok(TdLoss {
            loss,
            gradients: grads,
        })
    }

    /// Plain gradient-descent step.
    pub fn apply_gradients(&mut self, grads: &Gradients, learning_rate: f64) {
        for (layer, g) in self.layers.iter_mut().zip(&grads.layers) {
            layer
                .weights
                .iter_mut()
                .zip(&g.weights)
                .for_each(|(w, d)| *w -= learning_rate * d);
            layer
                .bias
                .iter_mut()
                .zip(&g.bias)
                .for_each(|(b, d)| *b -= learning_rate * d);
        }
    }
}

/// One gradient-descent step on the TD loss; returns the pre-step loss.
///
/// When `max_grad_norm` is set, gradients whose global norm exceeds it are
/// rescaled onto that norm before the step.
pub fn td_update(
    net: &mut QNetwork,
    target: &QNetwork,
    batch: &[&Transition],
    gamma: f64,
    learning_rate: f64,
    max_grad_norm: Option<f64>,
) -> Result<f64> {
    let TdLoss {
        loss,
        mut gradients,
    } = net.td_loss(target, batch, gamma)?;
    if !loss.is_finite() {
        return Err(Error::NonFiniteLoss);
    }
    if let Some(limit) = max_grad_norm {
        let norm = gradients.norm();
        if norm > limit {
            gradients.scale(limit / norm);
        }
    }
    net.apply_gradients(&gradients, learning_rate);
    if !net.is_finite() {
        return Err(Error::NonFiniteLoss);
    }
    Ok(loss)
}
