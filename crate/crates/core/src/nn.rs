//! Small dense multilayer perceptron trained with mini-batch SGD.
//!
//! Hidden layers use ReLU. The output layer is either linear (trained on mean
//! squared error) or softmax (trained on cross-entropy). Shared by the
//! autoencoder and the neural-network classifier baseline.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputKind {
    /// Identity output, mean squared error averaged over output dims.
    Linear,
    /// Softmax output, cross-entropy against one-hot targets.
    Softmax,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    /// Row-major `outputs × inputs`.
    #[serde(with = "crate::persist::block")]
    pub weights: Vec<f64>,
    #[serde(with = "crate::persist::block")]
    pub bias: Vec<f64>,
}

impl Dense {
    fn glorot(inputs: usize, outputs: usize, rng: &mut ChaCha8Rng) -> Self {
        let limit = (6.0 / (inputs + outputs) as f64).sqrt();
        let weights = (0..inputs * outputs).map(|_| rng.random_range(-limit..=limit)).collect();
        Self {
            inputs,
            outputs,
            weights,
            bias: vec![0.0; outputs],
        }
    }

    fn apply(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        for (row, b) in self.weights.chunks_exact(self.inputs).zip(&self.bias) {
            out.push(row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + b);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<Dense>,
    pub output: OutputKind,
}

/// Per-layer gradient of the batch loss.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub weights: Vec<Vec<f64>>,
    pub bias: Vec<Vec<f64>>,
}

impl Gradients {
    fn zeros(net: &Mlp) -> Self {
        Self {
            weights: net.layers.iter().map(|l| vec![0.0; l.weights.len()]).collect(),
            bias: net.layers.iter().map(|l| vec![0.0; l.bias.len()]).collect(),
        }
    }

    /// Flattened in the same order as [`Mlp::params`].
    pub fn flatten(&self) -> Vec<f64> {
        self.weights
            .iter()
            .zip(&self.bias)
            .flat_map(|(w, b)| w.iter().chain(b.iter()).copied())
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    /// Epochs without at least `tolerance` improvement before stopping.
    pub early_stop_patience: usize,
    pub tolerance: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            batch_size: 64,
            learning_rate: 0.01,
            seed: 7,
            early_stop_patience: 20,
            tolerance: 1e-5,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0
            || self.batch_size == 0
            || self.early_stop_patience == 0
            || !(self.learning_rate > 0.0)
            || !(self.tolerance > 0.0)
        {
            return Err(Error::InvalidParams(format!("training config must be positive: {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    /// Full-dataset loss after each epoch.
    pub loss_curve: Vec<f64>,
    pub stopped_early: bool,
}

fn relu_inplace(v: &mut [f64]) {
    v.iter_mut().for_each(|x| *x = x.max(0.0));
}

fn softmax_inplace(v: &mut [f64]) {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in v.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    v.iter_mut().for_each(|x| *x /= sum);
}

impl Mlp {
    /// Glorot-uniform weights, zero biases, drawn layer by layer from `seed`.
    pub fn new(sizes: &[usize], output: OutputKind, seed: u64) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(Error::BadShape(format!("layer sizes {sizes:?}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = sizes.windows(2).map(|w| Dense::glorot(w[0], w[1], &mut rng)).collect();
        Ok(Self { layers, output })
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].outputs
    }

    pub fn sizes(&self) -> Vec<usize> {
        std::iter::once(self.input_dim())
            .chain(self.layers.iter().map(|l| l.outputs))
            .collect()
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                got: x.len(),
            });
        }
        Ok(())
    }

    /// Activations of every layer, input first. Hidden layers are post-ReLU.
    pub fn activations(&self, x: &[f64]) -> Result<Vec<Vec<f64>>> {
        self.check_input(x)?;
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(x.to_vec());
        for (i, layer) in self.layers.iter().enumerate() {
            let mut out = Vec::with_capacity(layer.outputs);
            layer.apply(&acts[i], &mut out);
            if i + 1 < self.layers.len() {
                relu_inplace(&mut out);
            } else if self.output == OutputKind::Softmax {
                softmax_inplace(&mut out);
            }
            acts.push(out);
        }
        Ok(acts)
    }

    pub fn predict(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.activations(x)?.pop().unwrap())
    }

    /// Output of layer `depth` (1-based count of layers applied).
    pub fn partial(&self, x: &[f64], depth: usize) -> Result<Vec<f64>> {
        self.check_input(x)?;
        let mut cur = x.to_vec();
        let mut out = Vec::new();
        for (i, layer) in self.layers.iter().take(depth).enumerate() {
            layer.apply(&cur, &mut out);
            if i + 1 < self.layers.len() {
                relu_inplace(&mut out);
            } else if self.output == OutputKind::Softmax {
                softmax_inplace(&mut out);
            }
            std::mem::swap(&mut cur, &mut out);
        }
        Ok(cur)
    }

    fn sample_loss(&self, out: &[f64], target: &[f64]) -> f64 {
        match self.output {
            OutputKind::Linear => {
                out.iter().zip(target).map(|(o, t)| (o - t) * (o - t)).sum::<f64>() / out.len() as f64
            }
            OutputKind::Softmax => -out
                .iter()
                .zip(target)
                .filter(|(_, t)| **t > 0.0)
                .map(|(o, t)| t * o.max(1e-300).ln())
                .sum::<f64>(),
        }
    }

    /// Mean loss over a set of rows.
    pub fn loss<X: AsRef<[f64]>, T: AsRef<[f64]>>(&self, inputs: &[X], targets: &[T]) -> Result<f64> {
        if inputs.len() != targets.len() {
            return Err(Error::LengthMismatch {
                left: inputs.len(),
                right: targets.len(),
            });
        }
        if inputs.is_empty() {
            return Err(Error::EmptyInput("loss over zero rows"));
        }
        let mut total = 0.0;
        for (x, t) in inputs.iter().zip(targets) {
            let out = self.predict(x.as_ref())?;
            total += self.sample_loss(&out, t.as_ref());
        }
        Ok(total / inputs.len() as f64)
    }

    /// Batch-mean loss and its exact gradient by backpropagation.
    pub fn loss_and_gradient<X: AsRef<[f64]>, T: AsRef<[f64]>>(
        &self,
        inputs: &[X],
        targets: &[T],
    ) -> Result<(f64, Gradients)> {
        let idx: Vec<usize> = (0..inputs.len()).collect();
        self.batch_gradient(inputs, targets, &idx)
    }

    fn batch_gradient<X: AsRef<[f64]>, T: AsRef<[f64]>>(
        &self,
        inputs: &[X],
        targets: &[T],
        batch: &[usize],
    ) -> Result<(f64, Gradients)> {
        if batch.is_empty() {
            return Err(Error::EmptyInput("gradient over zero rows"));
        }
        let mut grad = Gradients::zeros(self);
        let scale = 1.0 / batch.len() as f64;
        let mut loss = 0.0;
        let n_layers = self.layers.len();
        for &r in batch {
            let acts = self.activations(inputs[r].as_ref())?;
            let out = &acts[n_layers];
            let target = targets[r].as_ref();
            if target.len() != out.len() {
                return Err(Error::DimensionMismatch {
                    expected: out.len(),
                    got: target.len(),
                });
            }
            loss += self.sample_loss(out, target);
            // dL/d(pre-activation) of the output layer
            let mut delta: Vec<f64> = match self.output {
                OutputKind::Linear => {
                    let q = out.len() as f64;
                    out.iter().zip(target).map(|(o, t)| 2.0 * (o - t) / q * scale).collect()
                }
                OutputKind::Softmax => out.iter().zip(target).map(|(o, t)| (o - t) * scale).collect(),
            };
            for li in (0..n_layers).rev() {
                let layer = &self.layers[li];
                let input = &acts[li];
                let gw = &mut grad.weights[li];
                for (o, d) in delta.iter().enumerate() {
                    grad.bias[li][o] += d;
                    let row = &mut gw[o * layer.inputs..(o + 1) * layer.inputs];
                    for (g, x) in row.iter_mut().zip(input) {
                        *g += d * x;
                    }
                }
                if li == 0 {
                    break;
                }
                let mut prev = vec![0.0; layer.inputs];
                for (o, d) in delta.iter().enumerate() {
                    let row = &layer.weights[o * layer.inputs..(o + 1) * layer.inputs];
                    for (p, w) in prev.iter_mut().zip(row) {
                        *p += d * w;
                    }
                }
                // ReLU derivative on the hidden activation feeding this layer
                for (p, a) in prev.iter_mut().zip(input) {
                    if *a <= 0.0 {
                        *p = 0.0;
                    }
                }
                delta = prev;
            }
        }
        Ok((loss * scale, grad))
    }

    fn step(&mut self, grad: &Gradients, lr: f64) {
        for (li, layer) in self.layers.iter_mut().enumerate() {
            for (w, g) in layer.weights.iter_mut().zip(&grad.weights[li]) {
                *w -= lr * g;
            }
            for (b, g) in layer.bias.iter_mut().zip(&grad.bias[li]) {
                *b -= lr * g;
            }
        }
    }

    pub fn params(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(l.bias.iter()).copied())
            .collect()
    }

    pub fn set_params(&mut self, p: &[f64]) -> Result<()> {
        let total: usize = self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum();
        if p.len() != total {
            return Err(Error::DimensionMismatch { expected: total, got: p.len() });
        }
        let mut at = 0;
        for l in &mut self.layers {
            let nw = l.weights.len();
            l.weights.copy_from_slice(&p[at..at + nw]);
            at += nw;
            let nb = l.bias.len();
            l.bias.copy_from_slice(&p[at..at + nb]);
            at += nb;
        }
        Ok(())
    }

    /// Mini-batch SGD with a seeded shuffle each epoch. Single-threaded and
    /// bit-reproducible for a given (seed, data, config).
    pub fn train<X: AsRef<[f64]>, T: AsRef<[f64]>>(
        &mut self,
        inputs: &[X],
        targets: &[T],
        cfg: &TrainConfig,
    ) -> Result<TrainReport> {
        cfg.validate()?;
        if inputs.is_empty() {
            return Err(Error::EmptyInput("no training rows"));
        }
        if inputs.len() != targets.len() {
            return Err(Error::LengthMismatch {
                left: inputs.len(),
                right: targets.len(),
            });
        }
        if inputs.len() < cfg.batch_size {
            return Err(Error::TooFewRows {
                rows: inputs.len(),
                needed: cfg.batch_size,
            });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut order: Vec<usize> = (0..inputs.len()).collect();
        let mut curve = Vec::with_capacity(cfg.epochs);
        let mut best = f64::INFINITY;
        let mut stale = 0;
        for epoch in 0..cfg.epochs {
            order.shuffle(&mut rng);
            for batch in order.chunks(cfg.batch_size) {
                let (_, g) = self.batch_gradient(inputs, targets, batch)?;
                self.step(&g, cfg.learning_rate);
            }
            let loss = self.loss(inputs, targets)?;
            if !loss.is_finite() {
                return Err(Error::NonFinite(format!(
                    "training loss became {loss} at epoch {epoch}; learning rate {} is too large",
                    cfg.learning_rate
                )));
            }
            curve.push(loss);
            if best - loss < cfg.tolerance {
                stale += 1;
            } else {
                stale = 0;
            }
            best = best.min(loss);
            if stale >= cfg.early_stop_patience {
                return Ok(TrainReport {
                    loss_curve: curve,
                    stopped_early: true,
                });
            }
        }
        Ok(TrainReport {
            loss_curve: curve,
            stopped_early: false,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn glorot_bounds_and_shapes() {
        let net = Mlp::new(&[30, 24, 16], OutputKind::Linear, 1).unwrap();
        assert_eq!(net.layers[0].weights.len(), 24 * 30);
        let limit = (6.0f64 / 54.0).sqrt();
        assert!(net.layers[0].weights.iter().all(|w| w.abs() <= limit));
        assert!(net.layers.iter().all(|l| l.bias.iter().all(|b| *b == 0.0)));
    }

    #[test]
    fn bad_shapes_rejected() {
        assert!(matches!(Mlp::new(&[3], OutputKind::Linear, 0), Err(Error::BadShape(_))));
        assert!(matches!(Mlp::new(&[3, 0, 2], OutputKind::Linear, 0), Err(Error::BadShape(_))));
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let net = Mlp::new(&[4, 8, 3], OutputKind::Softmax, 3).unwrap();
        let p = net.predict(&[1.0, -2.0, 0.5, 3.0]).unwrap();
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    fn finite_difference_check(output: OutputKind, targets: Vec<Vec<f64>>, sizes: &[usize]) {
        let net = Mlp::new(sizes, output, 11).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let inputs: Vec<Vec<f64>> = (0..targets.len())
            .map(|_| (0..sizes[0]).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let (_, g) = net.loss_and_gradient(&inputs, &targets).unwrap();
        let analytic = g.flatten();
        let base = net.params();
        let eps = 1e-5;
        let mut numeric = Vec::with_capacity(base.len());
        let mut probe = net.clone();
        for i in 0..base.len() {
            let mut p = base.clone();
            p[i] += eps;
            probe.set_params(&p).unwrap();
            let up = probe.loss(&inputs, &targets).unwrap();
            p[i] -= 2.0 * eps;
            probe.set_params(&p).unwrap();
            let down = probe.loss(&inputs, &targets).unwrap();
            numeric.push((up - down) / (2.0 * eps));
        }
        let diff: f64 = analytic.iter().zip(&numeric).map(|(a, n)| (a - n).powi(2)).sum::<f64>().sqrt();
        let norm_a: f64 = analytic.iter().map(|a| a * a).sum::<f64>().sqrt();
        let norm_n: f64 = numeric.iter().map(|a| a * a).sum::<f64>().sqrt();
        assert!(diff / norm_a.max(norm_n) < 1e-4, "relative error {}", diff / norm_a.max(norm_n));
    }

    #[test]
    fn softmax_gradient_matches_finite_differences() {
        let targets = vec![
            vec![1.0, 0.0, 0.0],
            vec![0.0, 1.0, 0.0],
            vec![0.0, 0.0, 1.0],
            vec![0.0, 1.0, 0.0],
        ];
        finite_difference_check(OutputKind::Softmax, targets, &[6, 5, 4, 3]);
    }

    #[test]
    fn linear_gradient_matches_finite_differences() {
        let targets = vec![vec![0.5, -0.25], vec![1.0, 2.0], vec![0.0, 0.0]];
        finite_difference_check(OutputKind::Linear, targets, &[3, 7, 2]);
    }

    #[test]
    fn training_rejects_bad_config() {
        let mut net = Mlp::new(&[2, 2], OutputKind::Linear, 0).unwrap();
        let x = vec![vec![0.0, 1.0]; 4];
        let cfg = TrainConfig {
            learning_rate: 0.0,
            batch_size: 2,
            ..TrainConfig::default()
        };
        assert!(matches!(net.train(&x, &x, &cfg), Err(Error::InvalidParams(_))));
        let empty: Vec<Vec<f64>> = vec![];
        assert!(matches!(
            net.train(&empty, &empty, &TrainConfig::default()),
            Err(Error::EmptyInput(_))
        ));
    }

    #[test]
    fn huge_learning_rate_reports_non_finite() {
        let mut net = Mlp::new(&[2, 8, 2], OutputKind::Linear, 0).unwrap();
        let x: Vec<Vec<f64>> = (0..8).map(|i| vec![i as f64 * 100.0, -(i as f64) * 50.0]).collect();
        let cfg = TrainConfig {
            learning_rate: 1e6,
            batch_size: 4,
            ..TrainConfig::default()
        };
        assert!(matches!(net.train(&x, &x, &cfg), Err(Error::NonFinite(_))));
    }
}
