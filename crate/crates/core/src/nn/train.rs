use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::optim::{Optimizer, OptimizerKind};
use super::{BinaryModel, ClassWeights};
use crate::error::{Error, Result};
use crate::features::FeatureBundle;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassWeighting {
    /// `N / (2 N_c)` per class, so both classes carry equal total weight.
    Balanced,
    Uniform,
    Fixed(ClassWeights),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerKind,
    pub seed: u64,
    pub class_weighting: ClassWeighting,
    /// Keep batch-norm statistics at their running values instead of
    /// normalizing with, and learning from, each batch.
    pub freeze_batch_norm: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            epochs: 20,
            batch_size: 128,
            optimizer: OptimizerKind::Adam,
            seed: 17,
            class_weighting: ClassWeighting::Balanced,
            freeze_batch_norm: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(alloc::format!("learning rate {} must be positive", self.learning_rate)));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        if let ClassWeighting::Fixed(w) = self.class_weighting {
            if w.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
                return Err(Error::Config("class weights must be finite and non-negative".into()));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean objective per epoch, measured during the epoch's passes.
    pub loss_history: Vec<f64>,
}

/// An extra differentiable term added to the training objective.
pub trait Penalty {
    fn value(&self, params: &[f64]) -> Result<f64>;

    fn add_grad(&self, params: &[f64], grad: &mut [f64]) -> Result<()>;
}

pub fn class_weights(data: &[FeatureBundle], weighting: ClassWeighting) -> ClassWeights {
    match weighting {
        ClassWeighting::Uniform => [1.0, 1.0],
        ClassWeighting::Fixed(w) => w,
        ClassWeighting::Balanced => {
            let pos = data.iter().filter(|s| s.label == Some(1)).count();
            let neg = data.len() - pos;
            if pos == 0 || neg == 0 {
                return [1.0, 1.0];
            }
            let n = data.len() as f64;
            [n / (2.0 * neg as f64), n / (2.0 * pos as f64)]
        }
    }
}

/// Trains a copy of `model` on labeled data containing both classes.
pub fn train<M: BinaryModel>(model: &M, data: &[FeatureBundle], config: &TrainConfig) -> Result<(M, TrainReport)> {
    let has = |c| data.iter().any(|s| s.label == Some(c));
    if !(has(0) && has(1)) {
        return Err(Error::Config("training data must contain both classes".into()));
    }
    fit(model, data, config, None)
}

/// Mini-batch training of a copy of `model`, optionally with a penalty
/// term. The input model is never modified, so a diverging run leaves the
/// caller's state intact.
pub fn fit<M: BinaryModel>(
    model: &M,
    data: &[FeatureBundle],
    config: &TrainConfig,
    penalty: Option<&dyn Penalty>,
) -> Result<(M, TrainReport)> {
    config.validate()?;
    if data.is_empty() {
        return Err(Error::EmptyInput("training data"));
    }
    if data.iter().any(|s| s.label.is_none()) {
        return Err(Error::MissingLabel);
    }
    let weights = class_weights(data, config.class_weighting);
    let mut model = model.clone();
    let mut optimizer = Optimizer::new(config.optimizer, config.learning_rate, model.params().len());
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut report = TrainReport::default();

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for range in batches(data.len(), config.batch_size) {
            let batch: Vec<&FeatureBundle> = order[range].iter().map(|&i| &data[i]).collect();
            let mut pass = if config.freeze_batch_norm {
                model.frozen_loss_grad(&batch, weights)?
            } else {
                model.batch_loss_grad(&batch, weights)?
            };
            let mut loss = pass.loss;
            if let Some(p) = penalty {
                loss += p.value(model.params())?;
                p.add_grad(model.params(), &mut pass.grad)?;
            }
            if !loss.is_finite() || pass.grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::Divergence { epoch, loss });
            }
            total += loss * batch.len() as f64;
            optimizer.step(model.params_mut(), &pass.grad);
            model.absorb(&pass);
        }
        let mean = total / data.len() as f64;
        if model.params().iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence { epoch, loss: mean });
        }
        report.loss_history.push(mean);
    }
    Ok((model, report))
}

/// Contiguous batch ranges; a trailing batch of one joins its predecessor
/// because batch statistics of a single row are degenerate.
fn batches(n: usize, size: usize) -> Vec<core::ops::Range<usize>> {
    let mut out: Vec<_> = (0..n).step_by(size).map(|s| s..(s + size).min(n)).collect();
    if out.len() >= 2 && out.last().is_some_and(|r| r.len() == 1) {
        let last = out.pop().expect("checked length");
        out.last_mut().expect("checked length").end = last.end;
    }
    out
}

/// Fraction of labeled samples whose thresholded prediction (anomaly when
/// the probability exceeds one half) matches the label.
pub fn accuracy<M: BinaryModel>(model: &M, data: &[FeatureBundle]) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::EmptyInput("evaluation data"));
    }
    let mut hits = 0usize;
    for s in data {
        let y = s.label.ok_or(Error::MissingLabel)?;
        let pred = (model.predict(s)? > 0.5) as u8;
        hits += (pred == y) as usize;
    }
    Ok(hits as f64 / data.len() as f64)
}
