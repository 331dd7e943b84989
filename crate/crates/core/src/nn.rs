//! Small dense feed-forward networks trained with mini-batch gradient descent.
//!
//! Shared by the autoencoder and the next-state classifier. Everything is
//! `f64` and single-threaded so that training is reproducible bit for bit.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Linear,
    Tanh,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Linear => z,
            Activation::Tanh => z.tanh(),
        }
    }

    /// Derivative expressed through the activation output `a`.
    fn derivative_from_output(self, a: f64) -> f64 {
        match self {
            Activation::Linear => 1.0,
            Activation::Tanh => 1.0 - a * a,
        }
    }
}

/// Fully connected layer; `weights` is row-major `n_out × n_in`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    pub n_in: usize,
    pub n_out: usize,
    pub activation: Activation,
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

impl DenseLayer {
    /// Glorot-uniform weights, zero biases.
    pub fn glorot<R: Rng + ?Sized>(n_in: usize, n_out: usize, activation: Activation, rng: &mut R) -> Self {
        let limit = (6.0 / (n_in + n_out) as f64).sqrt();
        let weights = (0..n_in * n_out)
            .map(|_| rng.random_range(-limit..=limit))
            .collect();
        Self {
            n_in,
            n_out,
            activation,
            weights,
            biases: vec![0.0; n_out],
        }
    }

    fn forward(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        for o in 0..self.n_out {
            let row = &self.weights[o * self.n_in..(o + 1) * self.n_in];
            let z: f64 = self.biases[o] + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
            out.push(self.activation.apply(z));
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<DenseLayer>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Loss {
    /// Mean over samples and output units of the squared error.
    Mse,
    /// Softmax over the linear outputs, mean negative log-likelihood.
    SoftmaxCrossEntropy,
}

/// Training targets: dense vectors for regression or class indices.
#[derive(Debug, Clone, Copy)]
pub enum Targets<'a> {
    Dense(&'a [Vec<f64>]),
    Classes(&'a [usize]),
}

impl Targets<'_> {
    fn len(&self) -> usize {
        match self {
            Targets::Dense(t) => t.len(),
            Targets::Classes(t) => t.len(),
        }
    }
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

impl Mlp {
    /// Layers `sizes[0] → sizes[1] → …`; every layer but the last uses
    /// `hidden`, the last uses `output`.
    pub fn new<R: Rng + ?Sized>(
        sizes: &[usize],
        hidden: Activation,
        output: Activation,
        rng: &mut R,
    ) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(Error::InvalidInput(format!(
                "network needs at least two non-empty layers, got {sizes:?}"
            )));
        }
        let last = sizes.len() - 2;
        let layers = sizes
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let act = if i == last { output } else { hidden };
                DenseLayer::glorot(w[0], w[1], act, rng)
            })
            .collect();
        Ok(Self { layers })
    }

    pub fn input_size(&self) -> usize {
        self.layers[0].n_in
    }

    pub fn output_size(&self) -> usize {
        self.layers.last().map_or(0, |l| l.n_out)
    }

    pub fn n_parameters(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.biases.len()).sum()
    }

    /// All parameters flattened layer by layer, weights before biases.
    pub fn parameters(&self) -> Vec<f64> {
        let mut p = Vec::with_capacity(self.n_parameters());
        for l in &self.layers {
            p.extend_from_slice(&l.weights);
            p.extend_from_slice(&l.biases);
        }
        p
    }

    pub fn set_parameters(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.n_parameters() {
            return Err(Error::DimensionMismatch {
                expected: self.n_parameters(),
                actual: params.len(),
            });
        }
        let mut at = 0;
        for l in &mut self.layers {
            let nw = l.weights.len();
            l.weights.copy_from_slice(&params[at..at + nw]);
            at += nw;
            let nb = l.biases.len();
            l.biases.copy_from_slice(&params[at..at + nb]);
            at += nb;
        }
        Ok(())
    }

    pub fn all_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().chain(&l.biases).all(|v| v.is_finite()))
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_size() {
            return Err(Error::DimensionMismatch {
                expected: self.input_size(),
                actual: x.len(),
            });
        }
        Ok(())
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.forward_range(x, 0, self.layers.len())
    }

    /// Runs layers `from..to` only; `x` must match layer `from`'s input.
    pub fn forward_range(&self, x: &[f64], from: usize, to: usize) -> Result<Vec<f64>> {
        let expected = self.layers[from].n_in;
        if x.len() != expected {
            return Err(Error::DimensionMismatch {
                expected,
                actual: x.len(),
            });
        }
        let mut cur = x.to_vec();
        let mut next = Vec::new();
        for layer in &self.layers[from..to] {
            layer.forward(&cur, &mut next);
            std::mem::swap(&mut cur, &mut next);
        }
        Ok(cur)
    }

    fn activations(&self, x: &[f64]) -> Vec<Vec<f64>> {
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(x.to_vec());
        for layer in &self.layers {
            let mut out = Vec::with_capacity(layer.n_out);
            layer.forward(acts.last().expect("non-empty"), &mut out);
            acts.push(out);
        }
        acts
    }

    /// Mean loss over the given samples and its gradient, flattened like
    /// [`Mlp::parameters`].
    pub fn loss_and_gradient(
        &self,
        inputs: &[Vec<f64>],
        targets: Targets<'_>,
        loss: Loss,
        indices: &[usize],
    ) -> Result<(f64, Vec<f64>)> {
        let mut grad = vec![0.0; self.n_parameters()];
        let offsets: Vec<usize> = self
            .layers
            .iter()
            .scan(0, |at, l| {
                let start = *at;
                *at += l.weights.len() + l.biases.len();
                Some(start)
            })
            .collect();
        let b = indices.len().max(1) as f64;
        let out_dim = self.output_size() as f64;
        let mut total = 0.0;
        for &i in indices {
            let x = &inputs[i];
            self.check_input(x)?;
            let acts = self.activations(x);
            let y = acts.last().expect("output layer");
            let mut delta: Vec<f64> = match (loss, targets) {
                (Loss::Mse, Targets::Dense(t)) => {
                    let t = &t[i];
                    if t.len() != y.len() {
                        return Err(Error::DimensionMismatch {
                            expected: y.len(),
                            actual: t.len(),
                        });
                    }
                    total += y.iter().zip(t).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / out_dim;
                    y.iter().zip(t).map(|(a, v)| 2.0 * (a - v) / out_dim).collect()
                }
                (Loss::SoftmaxCrossEntropy, Targets::Classes(c)) => {
                    let c = c[i];
                    if c >= y.len() {
                        return Err(Error::InvalidInput(format!(
                            "class {c} outside {} outputs",
                            y.len()
                        )));
                    }
                    let p = softmax(y);
                    total -= p[c].max(f64::MIN_POSITIVE).ln();
                    p.iter()
                        .enumerate()
                        .map(|(k, pk)| pk - if k == c { 1.0 } else { 0.0 })
                        .collect()
                }
                _ => {
                    return Err(Error::InvalidInput(
                        "loss and target kind do not match".into(),
                    ))
                }
            };
            let last = self.layers.len() - 1;
            // Output-layer activation derivative.
            let out_act = self.layers[last].activation;
            for (d, a) in delta.iter_mut().zip(y) {
                *d *= out_act.derivative_from_output(*a);
            }
            for l in (0..self.layers.len()).rev() {
                let layer = &self.layers[l];
                let a_prev = &acts[l];
                let g = &mut grad[offsets[l]..offsets[l] + layer.weights.len() + layer.biases.len()];
                let (gw, gb) = g.split_at_mut(layer.weights.len());
                for o in 0..layer.n_out {
                    let d = delta[o] / b;
                    if d == 0.0 {
                        continue;
                    }
                    gb[o] += d;
                    let row = &mut gw[o * layer.n_in..(o + 1) * layer.n_in];
                    for (gv, av) in row.iter_mut().zip(a_prev) {
                        *gv += d * av;
                    }
                }
                if l == 0 {
                    break;
                }
                let prev_act = self.layers[l - 1].activation;
                let mut next_delta = vec![0.0; layer.n_in];
                for o in 0..layer.n_out {
                    let d = delta[o];
                    if d == 0.0 {
                        continue;
                    }
                    let row = &layer.weights[o * layer.n_in..(o + 1) * layer.n_in];
                    for (nd, w) in next_delta.iter_mut().zip(row) {
                        *nd += w * d;
                    }
                }
                for (nd, a) in next_delta.iter_mut().zip(a_prev) {
                    *nd *= prev_act.derivative_from_output(*a);
                }
                delta = next_delta;
            }
        }
        Ok((total / b, grad))
    }

    /// Mean loss over all samples.
    pub fn loss(&self, inputs: &[Vec<f64>], targets: Targets<'_>, loss: Loss) -> Result<f64> {
        let all: Vec<usize> = (0..inputs.len()).collect();
        let mut total = 0.0;
        for chunk in all.chunks(256) {
            total += self.loss_only(inputs, targets, loss, chunk)? * chunk.len() as f64;
        }
        Ok(total / inputs.len().max(1) as f64)
    }

    fn loss_only(
        &self,
        inputs: &[Vec<f64>],
        targets: Targets<'_>,
        loss: Loss,
        indices: &[usize],
    ) -> Result<f64> {
        let mut total = 0.0;
        for &i in indices {
            let y = self.forward(&inputs[i])?;
            total += match (loss, targets) {
                (Loss::Mse, Targets::Dense(t)) => {
                    y.iter().zip(&t[i]).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / y.len() as f64
                }
                (Loss::SoftmaxCrossEntropy, Targets::Classes(c)) => {
                    -softmax(&y)[c[i]].max(f64::MIN_POSITIVE).ln()
                }
                _ => {
                    return Err(Error::InvalidInput(
                        "loss and target kind do not match".into(),
                    ))
                }
            };
        }
        Ok(total / indices.len().max(1) as f64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Optimizer {
    Sgd {
        learning_rate: f64,
    },
    Adam {
        learning_rate: f64,
        beta1: f64,
        beta2: f64,
        epsilon: f64,
    },
}

impl Optimizer {
    pub fn adam(learning_rate: f64) -> Self {
        Optimizer::Adam {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }

    pub fn learning_rate(&self) -> f64 {
        match *self {
            Optimizer::Sgd { learning_rate } | Optimizer::Adam { learning_rate, .. } => {
                learning_rate
            }
        }
    }
}

struct OptimizerState {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

fn step(opt: &Optimizer, state: &mut OptimizerState, params: &mut [f64], grad: &[f64]) {
    match *opt {
        Optimizer::Sgd { learning_rate } => {
            for (p, g) in params.iter_mut().zip(grad) {
                *p -= learning_rate * g;
            }
        }
        Optimizer::Adam {
            learning_rate,
            beta1,
            beta2,
            epsilon,
        } => {
            state.t += 1;
            let c1 = 1.0 - beta1.powi(state.t);
            let c2 = 1.0 - beta2.powi(state.t);
            for i in 0..params.len() {
                let g = grad[i];
                state.m[i] = beta1 * state.m[i] + (1.0 - beta1) * g;
                state.v[i] = beta2 * state.v[i] + (1.0 - beta2) * g * g;
                let mh = state.m[i] / c1;
                let vh = state.v[i] / c2;
                params[i] -= learning_rate * mh / (vh.sqrt() + epsilon);
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: Optimizer,
}

/// Trains in place. The returned curve starts with the loss before the
/// first update, followed by the full-data loss after every epoch.
pub fn train<R: Rng + ?Sized>(
    model: &mut Mlp,
    inputs: &[Vec<f64>],
    targets: Targets<'_>,
    loss: Loss,
    config: &TrainConfig,
    rng: &mut R,
) -> Result<Vec<f64>> {
    if inputs.is_empty() {
        return Err(Error::InvalidInput("no training samples".into()));
    }
    if targets.len() != inputs.len() {
        return Err(Error::DimensionMismatch {
            expected: inputs.len(),
            actual: targets.len(),
        });
    }
    if config.batch_size == 0 {
        return Err(Error::InvalidInput("batch size must be positive".into()));
    }
    let n_params = model.n_parameters();
    let mut state = OptimizerState {
        m: vec![0.0; n_params],
        v: vec![0.0; n_params],
        t: 0,
    };
    let mut curve = Vec::with_capacity(config.epochs + 1);
    let initial = model.loss(inputs, targets, loss)?;
    if !initial.is_finite() {
        return Err(Error::NonFiniteLoss {
            epoch: 0,
            loss: initial,
        });
    }
    curve.push(initial);
    let mut order: Vec<usize> = (0..inputs.len()).collect();
    let mut params = model.parameters();
    for epoch in 1..=config.epochs {
        order.shuffle(rng);
        for batch in order.chunks(config.batch_size) {
            let (_, grad) = model.loss_and_gradient(inputs, targets, loss, batch)?;
            step(&config.optimizer, &mut state, &mut params, &grad);
            model.set_parameters(&params)?;
        }
        let l = model.loss(inputs, targets, loss)?;
        if !l.is_finite() || !model.all_finite() {
            return Err(Error::NonFiniteLoss { epoch, loss: l });
        }
        log::trace!("epoch {epoch}: loss {l:.6}");
        curve.push(l);
    }
    Ok(curve)
}

/// Largest relative error between the analytic gradient and central
/// finite differences with step `h`.
pub fn gradient_check(
    model: &Mlp,
    inputs: &[Vec<f64>],
    targets: Targets<'_>,
    loss: Loss,
    h: f64,
) -> Result<f64> {
    let all: Vec<usize> = (0..inputs.len()).collect();
    let (_, analytic) = model.loss_and_gradient(inputs, targets, loss, &all)?;
    let base = model.parameters();
    let mut probe = model.clone();
    let mut worst: f64 = 0.0;
    for i in 0..base.len() {
        let mut p = base.clone();
        p[i] = base[i] + h;
        probe.set_parameters(&p)?;
        let up = probe.loss(inputs, targets, loss)?;
        p[i] = base[i] - h;
        probe.set_parameters(&p)?;
        let down = probe.loss(inputs, targets, loss)?;
        let numeric = (up - down) / (2.0 * h);
        let denom = analytic[i].abs().max(numeric.abs()).max(1e-8);
        worst = worst.max((analytic[i] - numeric).abs() / denom);
    }
    Ok(worst)
}
