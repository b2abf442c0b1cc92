//! Dense tanh networks with hand-written reverse-mode gradients.
//!
//! Parameters live in one flat vector. Each layer stores its weight matrix
//! row-major (`out x in`) followed by its bias, so a network with widths
//! `[n0, n1, ..., nk]` has `Σ (n_i + 1) * n_{i+1}` parameters.

mod checkpoint;
mod grad_check;
mod optim;

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointHeader};
pub use grad_check::{grad_check, GradCheckReport, FD_STEP};
pub use optim::{Adam, AdamConfig};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Head {
    #[serde(rename = "sigmoid-scalar")]
    Sigmoid,
    #[serde(rename = "softmax-vector")]
    Softmax,
    #[serde(rename = "linear-scalar")]
    Linear,
}

/// Largest value below 1; keeps sigmoid outputs inside the open interval.
const SIGMOID_MAX: f64 = 1.0 - f64::EPSILON / 2.0;

#[inline]
pub fn sigmoid(z: f64) -> f64 {
    let y = if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    };
    y.clamp(f64::MIN_POSITIVE, SIGMOID_MAX)
}

/// `ln(1 + e^x)` without overflow.
#[inline]
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
    logits.iter().map(|z| z - lse).collect()
}

pub fn one_hot(index: usize, len: usize) -> Vec<f64> {
    let mut v = vec![0.0; len];
    v[index] = 1.0;
    v
}

/// One-hot state followed by one-hot action.
pub fn one_hot_pair(s: usize, a: usize, num_states: usize, num_actions: usize) -> Vec<f64> {
    let mut v = vec![0.0; num_states + num_actions];
    v[s] = 1.0;
    v[num_states + a] = 1.0;
    v
}

/// Dot product with four independent accumulators, which lets the compiler
/// vectorize it. The summation order is fixed, so results are reproducible.
#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for i in 0..4 {
            acc[i] += x[i] * y[i];
        }
    }
    let tail: f64 = ra.iter().zip(rb).map(|(x, y)| x * y).sum();
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// Evaluate a scalar network on every one-hot `(s, a)` input, row-major by state.
pub fn pair_table(net: &Mlp, num_states: usize, num_actions: usize) -> Result<(Vec<f64>, Vec<Trace>)> {
    let mut values = Vec::with_capacity(num_states * num_actions);
    let mut traces = Vec::with_capacity(num_states * num_actions);
    for s in 0..num_states {
        for a in 0..num_actions {
            let tr = net.trace(&one_hot_pair(s, a, num_states, num_actions))?;
            values.push(tr.output[0]);
            traces.push(tr);
        }
    }
    Ok((values, traces))
}

/// Parameter gradient from `d loss / d output` for each traced input.
pub fn backprop_traces(net: &Mlp, traces: &[Trace], grad_outputs: &[f64]) -> Result<Vec<f64>> {
    if grad_outputs.len() != traces.len() {
        return Err(Error::contract("one output gradient per trace required"));
    }
    let mut grad = vec![0.0; net.num_params()];
    for (tr, &g) in traces.iter().zip(grad_outputs) {
        if g != 0.0 {
            net.backward(tr, &[g], &mut grad)?;
        }
    }
    Ok(grad)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    layer_sizes: Vec<usize>,
    head: Head,
    params: Vec<f64>,
    seed: u64,
}

/// Intermediate values of one forward pass, consumed by the backward pass.
#[derive(Debug, Clone)]
pub struct Trace {
    /// Input followed by each hidden layer's tanh activations.
    activations: Vec<Vec<f64>>,
    pub logits: Vec<f64>,
    pub output: Vec<f64>,
}

impl Mlp {
    pub fn param_count(layer_sizes: &[usize]) -> usize {
        layer_sizes.windows(2).map(|w| (w[0] + 1) * w[1]).sum()
    }

    fn validate_shape(layer_sizes: &[usize], head: Head) -> Result<()> {
        if layer_sizes.len() < 2 || layer_sizes.contains(&0) {
            return Err(Error::contract(format!("invalid layer sizes {layer_sizes:?}")));
        }
        let out = *layer_sizes.last().expect("non-empty");
        if head != Head::Softmax && out != 1 {
            return Err(Error::contract(format!("{head:?} head needs a single output, got {out}")));
        }
        Ok(())
    }

    /// Glorot-uniform weights and zero biases.
    pub fn new(layer_sizes: &[usize], head: Head, seed: u64) -> Result<Self> {
        Self::validate_shape(layer_sizes, head)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Vec::with_capacity(Self::param_count(layer_sizes));
        for w in layer_sizes.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            params.extend((0..fan_in * fan_out).map(|_| rng.gen_range(-limit..limit)));
            params.extend(std::iter::repeat(0.0).take(fan_out));
        }
        Ok(Self {
            layer_sizes: layer_sizes.to_vec(),
            head,
            params,
            seed,
        })
    }

    pub fn zeros(layer_sizes: &[usize], head: Head) -> Result<Self> {
        Self::validate_shape(layer_sizes, head)?;
        Ok(Self {
            layer_sizes: layer_sizes.to_vec(),
            head,
            params: vec![0.0; Self::param_count(layer_sizes)],
            seed: 0,
        })
    }

    pub fn from_params(layer_sizes: &[usize], head: Head, seed: u64, params: Vec<f64>) -> Result<Self> {
        Self::validate_shape(layer_sizes, head)?;
        if params.len() != Self::param_count(layer_sizes) {
            return Err(Error::contract(format!(
                "expected {} parameters, got {}",
                Self::param_count(layer_sizes),
                params.len()
            )));
        }
        Ok(Self {
            layer_sizes: layer_sizes.to_vec(),
            head,
            params,
            seed,
        })
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn head(&self) -> Head {
        self.head
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_sizes.last().expect("non-empty")
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    /// Zero the last layer so every input maps to the same output.
    pub fn zero_output_layer(&mut self) {
        let n = self.layer_sizes.len();
        let last = (self.layer_sizes[n - 2] + 1) * self.layer_sizes[n - 1];
        let len = self.params.len();
        self.params[len - last..].iter_mut().for_each(|p| *p = 0.0);
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(Error::contract(format!(
                "input length {} does not match network input width {}",
                x.len(),
                self.input_dim()
            )));
        }
        Ok(())
    }

    pub fn trace(&self, x: &[f64]) -> Result<Trace> {
        self.check_input(x)?;
        let layers = self.layer_sizes.len() - 1;
        let mut activations = Vec::with_capacity(layers);
        activations.push(x.to_vec());
        let mut offset = 0;
        let mut logits = Vec::new();
        for l in 0..layers {
            let (fan_in, fan_out) = (self.layer_sizes[l], self.layer_sizes[l + 1]);
            let w = &self.params[offset..offset + fan_in * fan_out];
            let b = &self.params[offset + fan_in * fan_out..offset + (fan_in + 1) * fan_out];
            offset += (fan_in + 1) * fan_out;
            let input = activations.last().expect("input present");
            let mut z = b.to_vec();
            for (o, zo) in z.iter_mut().enumerate() {
                let row = &w[o * fan_in..(o + 1) * fan_in];
                *zo += dot(row, input);
            }
            if l + 1 == layers {
                logits = z;
            } else {
                activations.push(z.into_iter().map(f64::tanh).collect());
            }
        }
        let output = match self.head {
            Head::Sigmoid => vec![sigmoid(logits[0])],
            Head::Softmax => softmax(&logits),
            Head::Linear => logits.clone(),
        };
        Ok(Trace {
            activations,
            logits,
            output,
        })
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.trace(x)?.output)
    }

    /// Accumulate into `grad` the parameter gradient given `d loss / d output`.
    pub fn backward(&self, trace: &Trace, grad_output: &[f64], grad: &mut [f64]) -> Result<()> {
        if grad_output.len() != trace.output.len() {
            return Err(Error::contract(format!(
                "loss gradient has {} components, network output has {}",
                grad_output.len(),
                trace.output.len()
            )));
        }
        let grad_logits: Vec<f64> = match self.head {
            Head::Sigmoid => {
                let y = trace.output[0];
                vec![grad_output[0] * y * (1.0 - y)]
            }
            Head::Softmax => {
                let p = &trace.output;
                let inner: f64 = p.iter().zip(grad_output).map(|(pi, gi)| pi * gi).sum();
                p.iter().zip(grad_output).map(|(pi, gi)| pi * (gi - inner)).collect()
            }
            Head::Linear => grad_output.to_vec(),
        };
        self.backward_logits(trace, &grad_logits, grad)
    }

    /// Accumulate into `grad` the parameter gradient given `d loss / d logits`.
    pub fn backward_logits(&self, trace: &Trace, grad_logits: &[f64], grad: &mut [f64]) -> Result<()> {
        if grad_logits.len() != self.output_dim() {
            return Err(Error::contract("logit gradient has the wrong width"));
        }
        if grad.len() != self.params.len() {
            return Err(Error::contract("gradient buffer has the wrong length"));
        }
        let layers = self.layer_sizes.len() - 1;
        let mut offsets = Vec::with_capacity(layers);
        let mut offset = 0;
        for l in 0..layers {
            offsets.push(offset);
            offset += (self.layer_sizes[l] + 1) * self.layer_sizes[l + 1];
        }
        let mut delta = grad_logits.to_vec();
        for l in (0..layers).rev() {
            let (fan_in, fan_out) = (self.layer_sizes[l], self.layer_sizes[l + 1]);
            let off = offsets[l];
            let input = &trace.activations[l];
            for o in 0..fan_out {
                let d = delta[o];
                if d == 0.0 {
                    continue;
                }
                let row = &mut grad[off + o * fan_in..off + (o + 1) * fan_in];
                for (g, xi) in row.iter_mut().zip(input) {
                    *g += d * xi;
                }
                grad[off + fan_in * fan_out + o] += d;
            }
            if l == 0 {
                break;
            }
            let w = &self.params[off..off + fan_in * fan_out];
            let mut prev = vec![0.0; fan_in];
            for o in 0..fan_out {
                let d = delta[o];
                if d == 0.0 {
                    continue;
                }
                for (p, wi) in prev.iter_mut().zip(&w[o * fan_in..(o + 1) * fan_in]) {
                    *p += d * wi;
                }
            }
            // input to layer l is tanh output of layer l-1
            for (p, a) in prev.iter_mut().zip(input) {
                *p *= 1.0 - a * a;
            }
            delta = prev;
        }
        Ok(())
    }
}
