//! Feed-forward ReLU network with a sigmoid output, trained on binary
//! cross-entropy with a plateau learning-rate schedule.

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{axpy, bce_with_logit, dot, sigmoid, Matrix};
use crate::{derive_seed, seeded_rng};

const BATCH_SIZE: usize = 32;
const MIN_LR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Optimizer {
    Adam,
    Sgd,
    AdaDelta,
}

impl Optimizer {
    pub fn default_lr(self) -> f64 {
        match self {
            Optimizer::Adam => 0.001,
            Optimizer::Sgd => 0.01,
            Optimizer::AdaDelta => 1.0,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Optimizer::Adam => "adam",
            Optimizer::Sgd => "sgd",
            Optimizer::AdaDelta => "ada_delta",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [Optimizer::Adam, Optimizer::Sgd, Optimizer::AdaDelta]
            .into_iter()
            .find(|o| o.as_str() == s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetHyper {
    pub lr_decay_factor: f64,
    pub optimizer: Optimizer,
    pub n_hidden: usize,
    pub units: usize,
    /// `None` uses the optimizer's default rate.
    pub initial_lr: Option<f64>,
    pub patience: usize,
    pub max_epochs: usize,
}

impl Default for NetHyper {
    fn default() -> Self {
        NetHyper {
            lr_decay_factor: 0.5,
            optimizer: Optimizer::Adam,
            n_hidden: 2,
            units: 128,
            initial_lr: None,
            patience: 5,
            max_epochs: 100,
        }
    }
}

impl NetHyper {
    pub fn learning_rate(&self) -> f64 {
        self.initial_lr.unwrap_or_else(|| self.optimizer.default_lr())
    }
}

/// Dense layer; `weights` is `out × in`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub weights: Matrix,
    pub bias: Vec<f64>,
}

impl Layer {
    fn zeros_like(&self) -> Layer {
        Layer {
            weights: Matrix::zeros(self.weights.rows, self.weights.cols),
            bias: vec![0.0; self.bias.len()],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetModel {
    pub hyper: NetHyper,
    pub seed: u64,
    /// Per-feature standardization fitted on the training rows.
    pub input_mean: Vec<f64>,
    pub input_scale: Vec<f64>,
    pub layers: Vec<Layer>,
    pub epochs_run: usize,
    pub final_lr: f64,
    pub final_monitor_loss: f64,
}

impl NetModel {
    pub fn n_features(&self) -> usize {
        self.input_mean.len()
    }

    fn standardize(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(&self.input_mean)
            .zip(&self.input_scale)
            .map(|((v, m), s)| (v - m) / s)
            .collect()
    }

    pub(crate) fn predict_unchecked(&self, x: &[f64]) -> f64 {
        sigmoid(output_logit(&self.layers, &self.standardize(x)))
    }
}

fn layer_forward(layer: &Layer, input: &[f64], relu: bool) -> Vec<f64> {
    (0..layer.weights.rows)
        .map(|o| {
            let z = dot(layer.weights.row(o), input) + layer.bias[o];
            if relu {
                z.max(0.0)
            } else {
                z
            }
        })
        .collect()
}

fn output_logit(layers: &[Layer], x: &[f64]) -> f64 {
    let last = layers.len() - 1;
    let mut a = x.to_vec();
    for (i, layer) in layers.iter().enumerate() {
        a = layer_forward(layer, &a, i < last);
    }
    a[0]
}

/// Mean binary cross-entropy over the rows of `x` (already standardized)
/// and its gradient for every layer.
pub fn net_loss_and_grad(layers: &[Layer], x: &Matrix, y: &[u8]) -> (f64, Vec<Layer>) {
    let rows: Vec<usize> = (0..x.rows).collect();
    let mut grads: Vec<Layer> = layers.iter().map(Layer::zeros_like).collect();
    let loss = accumulate(layers, x, y, &rows, &mut grads);
    (loss, grads)
}

fn accumulate(layers: &[Layer], x: &Matrix, y: &[u8], rows: &[usize], grads: &mut [Layer]) -> f64 {
    for g in grads.iter_mut() {
        g.weights.fill(0.0);
        g.bias.fill(0.0);
    }
    let last = layers.len() - 1;
    let scale = 1.0 / rows.len() as f64;
    let mut loss = 0.0;
    for &r in rows {
        let mut acts = vec![x.row(r).to_vec()];
        for (i, layer) in layers.iter().enumerate() {
            let next = layer_forward(layer, acts.last().unwrap(), i < last);
            acts.push(next);
        }
        let z = acts[layers.len()][0];
        let t = y[r] as f64;
        loss += bce_with_logit(z, t);
        let mut delta = vec![(sigmoid(z) - t) * scale];
        for i in (0..layers.len()).rev() {
            let input = &acts[i];
            let g = &mut grads[i];
            for (o, &d) in delta.iter().enumerate() {
                if d != 0.0 {
                    axpy(d, input, g.weights.row_mut(o));
                    g.bias[o] += d;
                }
            }
            if i == 0 {
                break;
            }
            let mut prev = vec![0.0; input.len()];
            for (o, &d) in delta.iter().enumerate() {
                if d != 0.0 {
                    axpy(d, layers[i].weights.row(o), &mut prev);
                }
            }
            // ReLU derivative of the layer that produced `input`.
            for (p, &a) in prev.iter_mut().zip(input) {
                if a <= 0.0 {
                    *p = 0.0;
                }
            }
            delta = prev;
        }
    }
    loss * scale
}

fn mean_loss(layers: &[Layer], x: &Matrix, y: &[u8], rows: &[usize]) -> f64 {
    rows.iter()
        .map(|&r| bce_with_logit(output_logit(layers, x.row(r)), y[r] as f64))
        .sum::<f64>()
        / rows.len() as f64
}

/// Multiplies the learning rate by `factor` once the monitored loss has gone
/// `patience` consecutive epochs without improving on its best value.
#[derive(Debug, Clone, PartialEq)]
pub struct PlateauScheduler {
    pub lr: f64,
    pub factor: f64,
    pub patience: usize,
    best: f64,
    wait: usize,
}

impl PlateauScheduler {
    const MIN_DELTA: f64 = 1e-12;

    pub fn new(lr: f64, factor: f64, patience: usize) -> Self {
        PlateauScheduler {
            lr,
            factor,
            patience,
            best: f64::INFINITY,
            wait: 0,
        }
    }

    /// Feeds one epoch's loss; returns whether the rate was reduced.
    pub fn step(&mut self, loss: f64) -> bool {
        if loss < self.best - Self::MIN_DELTA {
            self.best = loss;
            self.wait = 0;
            return false;
        }
        self.wait += 1;
        if self.wait >= self.patience {
            self.lr *= self.factor;
            self.wait = 0;
            return true;
        }
        false
    }
}

/// Per-parameter optimizer state, laid out like the layers.
struct OptState {
    kind: Optimizer,
    first: Vec<Layer>,
    second: Vec<Layer>,
    steps: i32,
}

impl OptState {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const ADAM_EPS: f64 = 1e-8;
    const RHO: f64 = 0.95;
    const DELTA_EPS: f64 = 1e-6;

    fn new(kind: Optimizer, layers: &[Layer]) -> Self {
        let zeros: Vec<Layer> = layers.iter().map(Layer::zeros_like).collect();
        OptState {
            kind,
            first: zeros.clone(),
            second: zeros,
            steps: 0,
        }
    }

    fn step(&mut self, layers: &mut [Layer], grads: &[Layer], lr: f64) {
        self.steps += 1;
        let kind = self.kind;
        let t = self.steps;
        for (((layer, grad), m), v) in layers
            .iter_mut()
            .zip(grads)
            .zip(self.first.iter_mut())
            .zip(self.second.iter_mut())
        {
            let tensors = [
                (&mut layer.weights.data, &grad.weights.data, &mut m.weights.data, &mut v.weights.data),
                (&mut layer.bias, &grad.bias, &mut m.bias, &mut v.bias),
            ];
            for (p, g, m, v) in tensors {
                update(kind, t, lr, p, g, m, v);
            }
        }
    }
}

fn update(kind: Optimizer, t: i32, lr: f64, p: &mut [f64], g: &[f64], m: &mut [f64], v: &mut [f64]) {
    match kind {
        Optimizer::Sgd => axpy(-lr, g, p),
        Optimizer::Adam => {
            let c1 = 1.0 - OptState::BETA1.powi(t);
            let c2 = 1.0 - OptState::BETA2.powi(t);
            for i in 0..p.len() {
                m[i] = OptState::BETA1 * m[i] + (1.0 - OptState::BETA1) * g[i];
                v[i] = OptState::BETA2 * v[i] + (1.0 - OptState::BETA2) * g[i] * g[i];
                p[i] -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + OptState::ADAM_EPS);
            }
        }
        Optimizer::AdaDelta => {
            // `m` accumulates squared gradients, `v` squared updates.
            for i in 0..p.len() {
                m[i] = OptState::RHO * m[i] + (1.0 - OptState::RHO) * g[i] * g[i];
                let dx = -((v[i] + OptState::DELTA_EPS).sqrt() / (m[i] + OptState::DELTA_EPS).sqrt()) * g[i];
                v[i] = OptState::RHO * v[i] + (1.0 - OptState::RHO) * dx * dx;
                p[i] += lr * dx;
            }
        }
    }
}

/// He-uniform initialization with zero biases.
fn init_layers(n_in: usize, hyper: &NetHyper, seed: u64) -> Vec<Layer> {
    let mut rng = seeded_rng(seed);
    let mut sizes = vec![n_in];
    sizes.extend(std::iter::repeat_n(hyper.units, hyper.n_hidden));
    sizes.push(1);
    sizes
        .windows(2)
        .map(|w| {
            let limit = (6.0 / w[0] as f64).sqrt();
            let mut weights = Matrix::zeros(w[1], w[0]);
            weights
                .data
                .iter_mut()
                .for_each(|v| *v = rng.random_range(-limit..limit));
            Layer {
                weights,
                bias: vec![0.0; w[1]],
            }
        })
        .collect()
}

fn fit_standardization(x: &Matrix) -> (Vec<f64>, Vec<f64>) {
    let n = x.rows as f64;
    let mut mean = vec![0.0; x.cols];
    for r in 0..x.rows {
        axpy(1.0 / n, x.row(r), &mut mean);
    }
    let mut var = vec![0.0; x.cols];
    for r in 0..x.rows {
        for (c, v) in x.row(r).iter().enumerate() {
            var[c] += (v - mean[c]).powi(2) / n;
        }
    }
    let scale = var
        .into_iter()
        .map(|v| if v.sqrt() > 1e-12 { v.sqrt() } else { 1.0 })
        .collect();
    (mean, scale)
}

/// Trains on 90% of the rows and monitors loss on the remaining 10%
/// (on all rows when there are fewer than ten).
pub fn train_net(x: &Matrix, y: &[u8], hyper: &NetHyper, seed: u64) -> Result<NetModel> {
    super::check_training_data(x, y)?;
    if hyper.n_hidden == 0 || hyper.units == 0 {
        return Err(Error::InvalidArgument("net needs at least one hidden unit".into()));
    }
    let (input_mean, input_scale) = fit_standardization(x);
    let mut xs = x.clone();
    for r in 0..xs.rows {
        for (c, v) in xs.row_mut(r).iter_mut().enumerate() {
            *v = (*v - input_mean[c]) / input_scale[c];
        }
    }

    let mut rng = seeded_rng(derive_seed(seed, 1));
    let mut order: Vec<usize> = (0..x.rows).collect();
    order.shuffle(&mut rng);
    let n_monitor = x.rows / 10;
    let (monitor, mut train) = if n_monitor == 0 {
        (order.clone(), order)
    } else {
        let (m, t) = order.split_at(n_monitor);
        (m.to_vec(), t.to_vec())
    };

    let mut layers = init_layers(x.cols, hyper, derive_seed(seed, 0));
    let mut grads: Vec<Layer> = layers.iter().map(Layer::zeros_like).collect();
    let mut opt = OptState::new(hyper.optimizer, &layers);
    let mut sched = PlateauScheduler::new(hyper.learning_rate(), hyper.lr_decay_factor, hyper.patience);
    let mut monitor_loss = mean_loss(&layers, &xs, y, &monitor);
    let mut epochs_run = 0;
    for epoch in 1..=hyper.max_epochs {
        if sched.lr < MIN_LR {
            break;
        }
        train.shuffle(&mut rng);
        for batch in train.chunks(BATCH_SIZE) {
            let loss = accumulate(&layers, &xs, y, batch, &mut grads);
            if !loss.is_finite() {
                return Err(Error::Divergence { epoch });
            }
            opt.step(&mut layers, &grads, sched.lr);
        }
        monitor_loss = mean_loss(&layers, &xs, y, &monitor);
        if !monitor_loss.is_finite() {
            return Err(Error::Divergence { epoch });
        }
        epochs_run = epoch;
        if sched.step(monitor_loss) {
            log::debug!("net epoch {epoch}: learning rate now {}", sched.lr);
        }
    }
    Ok(NetModel {
        hyper: hyper.clone(),
        seed,
        input_mean,
        input_scale,
        layers,
        epochs_run,
        final_lr: sched.lr,
        final_monitor_loss: monitor_loss,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flat_losses_fire_once_after_six_epochs() {
        let mut s = PlateauScheduler::new(1.0, 0.5, 5);
        let fired: Vec<bool> = (0..6).map(|_| s.step(0.5)).collect();
        assert_eq!(fired, [false, false, false, false, false, true]);
        assert_eq!(s.lr, 0.5);
    }

    #[test]
    fn zero_network_predicts_one_half() {
        let hyper = NetHyper::default();
        let mut layers = init_layers(3, &hyper, 0);
        for l in &mut layers {
            l.weights.fill(0.0);
        }
        let m = NetModel {
            hyper,
            seed: 0,
            input_mean: vec![0.0; 3],
            input_scale: vec![1.0; 3],
            layers,
            epochs_run: 0,
            final_lr: 0.0,
            final_monitor_loss: 0.0,
        };
        assert_eq!(m.predict_unchecked(&[1.0, -2.0, 3.0]), 0.5);
    }

    #[test]
    fn two_blobs_are_separated() {
        let mut rng = seeded_rng(11);
        let mut rows = Vec::new();
        let mut y = Vec::new();
        for i in 0..100 {
            let c = if i % 2 == 0 { 1.0 } else { -1.0 };
            rows.push((0..4).map(|_| c + rng.random_range(-0.8..0.8)).collect::<Vec<f64>>());
            y.push((i % 2 == 0) as u8);
        }
        let x = Matrix::from_rows(&rows);
        let m = train_net(&x, &y, &NetHyper::default(), 5).unwrap();
        let correct = (0..100)
            .filter(|&i| (m.predict_unchecked(x.row(i)) >= 0.5) as u8 == y[i])
            .count();
        assert!(correct >= 95, "{correct}");
    }

    #[test]
    fn training_is_deterministic() {
        let x = Matrix::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0], vec![0.5, 0.2], vec![0.9, 0.1]]);
        let hyper = NetHyper {
            max_epochs: 5,
            units: 8,
            ..NetHyper::default()
        };
        assert_eq!(
            train_net(&x, &[0, 1, 0, 1], &hyper, 3).unwrap(),
            train_net(&x, &[0, 1, 0, 1], &hyper, 3).unwrap()
        );
    }
}
