//! A multinomial softmax classifier trained with reward-weighted
//! cross-entropy, small enough that every claim about it can be checked
//! numerically.
//!
//! Batch loss is the plain mean over examples of `reward * -log p(label)`,
//! plus `0.5 * l2 * |W|^2` (the bias is not penalised).

mod experiment;

pub use experiment::{
    run_experiment, run_experiment_seeds, summarize, toy_conflict_scores, ExperimentRow, ExperimentSpec, PolicySummary,
    ToyPolicy, REPORT_HEADER,
};

use rand::seq::SliceRandom;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

/// Parameters, also used as the gradient container.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyModel {
    pub feature_dim: usize,
    pub class_count: usize,
    /// Row-major `[feature_dim x class_count]`.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyExample {
    pub features: Vec<f64>,
    pub label: usize,
    pub reward: f64,
}

impl ToyExample {
    pub fn new(features: Vec<f64>, label: usize, reward: f64) -> Self {
        ToyExample {
            features,
            label,
            reward,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub l2: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.5,
            epochs: 10,
            batch_size: 32,
            seed: 0,
            l2: 0.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning_rate must be > 0".into()));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch_size must be >= 1".into()));
        }
        if self.l2.is_nan() || self.l2 < 0.0 {
            return Err(Error::Config("l2 must be >= 0".into()));
        }
        Ok(())
    }
}

impl ToyModel {
    pub fn zeros(feature_dim: usize, class_count: usize) -> Self {
        ToyModel {
            feature_dim,
            class_count,
            weights: vec![0.0; feature_dim * class_count],
            bias: vec![0.0; class_count],
        }
    }

    /// Gaussian init with standard deviation `scale`.
    pub fn random(feature_dim: usize, class_count: usize, scale: f64, seed: u64) -> Self {
        let mut rng = seed::rng(seed);
        let normal = Normal::new(0.0, scale).expect("finite scale");
        let mut m = ToyModel::zeros(feature_dim, class_count);
        m.weights.iter_mut().for_each(|w| *w = normal.sample(&mut rng));
        m.bias.iter_mut().for_each(|b| *b = normal.sample(&mut rng));
        m
    }

    pub fn logits(&self, x: &[f64]) -> Vec<f64> {
        let mut z = self.bias.clone();
        for (f, &xf) in x.iter().enumerate() {
            let row = &self.weights[f * self.class_count..(f + 1) * self.class_count];
            for (zc, w) in z.iter_mut().zip(row) {
                *zc += xf * w;
            }
        }
        z
    }

    pub fn predict(&self, x: &[f64]) -> usize {
        argmax(&self.logits(x))
    }

    pub fn accuracy(&self, data: &[ToyExample]) -> f64 {
        if data.is_empty() {
            return 0.0;
        }
        let hits = data.iter().filter(|e| self.predict(&e.features) == e.label).count();
        hits as f64 / data.len() as f64
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().chain(&self.bias).all(|v| v.is_finite())
    }

    pub fn params(&self) -> impl Iterator<Item = &f64> {
        self.weights.iter().chain(&self.bias)
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.weights.iter_mut().chain(self.bias.iter_mut())
    }

    pub fn distance(&self, other: &ToyModel) -> f64 {
        self.params()
            .zip(other.params())
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt()
    }

    fn axpy(&mut self, alpha: f64, g: &ToyModel) {
        for (p, d) in self.params_mut().zip(g.params()) {
            *p += alpha * d;
        }
    }
}

pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

/// Numerically stable `log softmax`.
pub fn log_softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
    z.iter().map(|v| v - lse).collect()
}

fn check_batch(model: &ToyModel, batch: &[ToyExample]) -> Result<()> {
    if batch.is_empty() {
        return Err(Error::invalid("empty batch"));
    }
    for (i, e) in batch.iter().enumerate() {
        if e.features.len() != model.feature_dim {
            return Err(Error::invalid(format!(
                "example {i} has {} features, model expects {}",
                e.features.len(),
                model.feature_dim
            )));
        }
        if e.features.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("example {i} has a non-finite feature")));
        }
        if e.label >= model.class_count {
            return Err(Error::invalid(format!("example {i} label {} out of range", e.label)));
        }
    }
    Ok(())
}

pub fn weighted_loss(model: &ToyModel, batch: &[ToyExample], l2: f64) -> Result<f64> {
    check_batch(model, batch)?;
    let data: f64 = batch
        .iter()
        .map(|e| -e.reward * log_softmax(&model.logits(&e.features))[e.label])
        .sum::<f64>()
        / batch.len() as f64;
    let penalty = 0.5 * l2 * model.weights.iter().map(|w| w * w).sum::<f64>();
    Ok(data + penalty)
}

/// Analytic gradient of [`weighted_loss`]:
/// `d/dz_c = reward * (softmax_c - [c == label]) / B`.
pub fn grad(model: &ToyModel, batch: &[ToyExample], l2: f64) -> Result<ToyModel> {
    check_batch(model, batch)?;
    let c = model.class_count;
    let mut g = ToyModel::zeros(model.feature_dim, c);
    let scale = 1.0 / batch.len() as f64;
    for e in batch {
        let lp = log_softmax(&model.logits(&e.features));
        let mut dz: Vec<f64> = lp.iter().map(|v| v.exp()).collect();
        dz[e.label] -= 1.0;
        let w = e.reward * scale;
        for (cls, d) in dz.iter().enumerate() {
            g.bias[cls] += w * d;
        }
        for (f, &xf) in e.features.iter().enumerate() {
            let row = &mut g.weights[f * c..(f + 1) * c];
            for (gw, d) in row.iter_mut().zip(&dz) {
                *gw += w * xf * d;
            }
        }
    }
    for (gw, w) in g.weights.iter_mut().zip(&model.weights) {
        *gw += l2 * w;
    }
    Ok(g)
}

/// Mini-batch gradient descent with a seeded shuffle per epoch.
pub fn train(model0: &ToyModel, data: &[ToyExample], config: &TrainConfig) -> Result<ToyModel> {
    config.validate()?;
    if data.is_empty() {
        return Err(Error::invalid("no training data"));
    }
    check_batch(model0, data)?;
    let mut model = model0.clone();
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut rng = seed::rng(seed::derive(config.seed, "train-shuffle"));
    let mut batch = Vec::with_capacity(config.batch_size);
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        for (b, chunk) in order.chunks(config.batch_size).enumerate() {
            batch.clear();
            batch.extend(chunk.iter().map(|&i| data[i].clone()));
            let g = grad(&model, &batch, config.l2)?;
            model.axpy(-config.learning_rate, &g);
            if !model.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    batch: b,
                    loss: f64::NAN,
                });
            }
        }
        let loss = weighted_loss(&model, data, config.l2)?;
        if !loss.is_finite() {
            return Err(Error::Diverged {
                epoch,
                batch: order.len().div_ceil(config.batch_size),
                loss,
            });
        }
    }
    Ok(model)
}
