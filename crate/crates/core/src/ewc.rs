//! Elastic weight consolidation: a diagonal Fisher estimate, the quadratic
//! penalty anchoring parameters to their previous values, and retraining
//! under that penalty.

use alloc::string::String;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FeatureBundle;
use crate::math;
use crate::nn::train::{fit, Penalty};
use crate::nn::{BinaryModel, TrainConfig, TrainReport};

pub const DEFAULT_LAMBDA: f64 = 10.0;
pub const DEFAULT_FISHER_SAMPLES: usize = 512;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FisherDiagonal {
    pub values: Vec<f64>,
    pub sample_count: usize,
}

/// Previous parameters, their Fisher importance and the penalty strength.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EwcAnchor {
    pub theta: Vec<f64>,
    pub fisher: FisherDiagonal,
    pub lambda: f64,
    pub task_tag: String,
}

impl EwcAnchor {
    pub fn new(theta: Vec<f64>, fisher: FisherDiagonal, lambda: f64, task_tag: impl Into<String>) -> Result<Self> {
        let anchor = Self {
            theta,
            fisher,
            lambda,
            task_tag: task_tag.into(),
        };
        anchor.validate(anchor.theta.len())?;
        Ok(anchor)
    }

    pub fn validate(&self, n_params: usize) -> Result<()> {
        for len in [self.theta.len(), self.fisher.values.len()] {
            if len != n_params {
                return Err(Error::Shape {
                    expected: n_params,
                    actual: len,
                });
            }
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::Config(alloc::format!("EWC strength {} must be finite and >= 0", self.lambda)));
        }
        if self.theta.iter().any(|v| !v.is_finite()) {
            return Err(Error::Schema("non-finite anchor parameter".into()));
        }
        if self.fisher.values.iter().any(|v| !(*v >= 0.0)) {
            return Err(Error::Schema("Fisher entries must be non-negative".into()));
        }
        Ok(())
    }

    fn check(&self, params: &[f64]) -> Result<()> {
        if params.len() != self.theta.len() {
            return Err(Error::Shape {
                expected: self.theta.len(),
                actual: params.len(),
            });
        }
        Ok(())
    }
}

impl Penalty for EwcAnchor {
    /// `λ/2 Σ F_i (θ_i − θ*_i)²`.
    fn value(&self, params: &[f64]) -> Result<f64> {
        self.check(params)?;
        let sum: f64 = params
            .iter()
            .zip(&self.theta)
            .zip(&self.fisher.values)
            .map(|((p, t), f)| f * (p - t) * (p - t))
            .sum();
        Ok(0.5 * self.lambda * sum)
    }

    /// Adds `λ F_i (θ_i − θ*_i)`.
    fn add_grad(&self, params: &[f64], grad: &mut [f64]) -> Result<()> {
        self.check(params)?;
        for (((g, p), t), f) in grad.iter_mut().zip(params).zip(&self.theta).zip(&self.fisher.values) {
            *g += self.lambda * f * (p - t);
        }
        Ok(())
    }
}

/// `base_loss` plus the anchor's quadratic penalty at `params`.
pub fn ewc_loss(params: &[f64], base_loss: f64, anchor: &EwcAnchor) -> Result<f64> {
    Ok(base_loss + anchor.value(params)?)
}

/// Diagonal Fisher information under the model's own predictive
/// distribution.
///
/// For a Bernoulli output `p = σ(z)` the expected squared score over labels
/// drawn from the model is `p (1 − p) (∂z/∂θ)²`, so the expectation over the
/// label is taken exactly rather than by drawing labels. When `data` holds
/// more than `n_samples` points a seeded subset is used.
pub fn estimate_fisher<M: BinaryModel>(model: &M, data: &[FeatureBundle], n_samples: usize, seed: u64) -> Result<FisherDiagonal> {
    if data.is_empty() || n_samples == 0 {
        return Err(Error::EmptyInput("Fisher estimation data"));
    }
    let picked: Vec<usize> = if n_samples >= data.len() {
        (0..data.len()).collect()
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut idx = rand::seq::index::sample(&mut rng, data.len(), n_samples).into_vec();
        idx.sort_unstable();
        idx
    };
    let mut values = alloc::vec![0.0; model.params().len()];
    for &i in &picked {
        let (z, grad) = model.logit_grad(&data[i])?;
        let p = math::sigmoid(z);
        let w = p * (1.0 - p);
        for (f, g) in values.iter_mut().zip(&grad) {
            *f += w * g * g;
        }
    }
    let n = picked.len() as f64;
    values.iter_mut().for_each(|v| *v /= n);
    Ok(FisherDiagonal {
        values,
        sample_count: picked.len(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EwcConfig {
    pub lambda: f64,
    pub fisher_samples: usize,
}

impl Default for EwcConfig {
    fn default() -> Self {
        Self {
            lambda: DEFAULT_LAMBDA,
            fisher_samples: DEFAULT_FISHER_SAMPLES,
        }
    }
}

/// Result of one EWC retraining round.
#[derive(Clone, Debug)]
pub struct Retrained<M> {
    pub model: M,
    pub anchor: EwcAnchor,
    pub report: TrainReport,
}

/// Fine-tunes a copy of `model` with the anchor's penalty added to every
/// step, then re-anchors at the new parameters with a Fisher estimate taken
/// on the fine-tune set. The anchor's λ carries over unless `lambda` is
/// given.
pub fn retrain_ewc<M: BinaryModel>(
    model: &M,
    anchor: &EwcAnchor,
    finetune: &[FeatureBundle],
    config: &TrainConfig,
    lambda: Option<f64>,
    fisher_samples: usize,
    task_tag: impl Into<String>,
) -> Result<Retrained<M>> {
    if finetune.is_empty() {
        return Err(Error::EmptyInput("fine-tune set"));
    }
    anchor.validate(model.params().len())?;
    let mut active = anchor.clone();
    if let Some(l) = lambda {
        active.lambda = l;
        active.validate(model.params().len())?;
    }
    // a zero-strength penalty is skipped so the trajectory matches plain training
    let penalty: Option<&dyn Penalty> = if active.lambda > 0.0 { Some(&active) } else { None };
    let (trained, report) = fit(model, finetune, config, penalty)?;
    let fisher = estimate_fisher(&trained, finetune, fisher_samples, config.seed)?;
    let new_anchor = EwcAnchor::new(trained.params().to_vec(), fisher, active.lambda, task_tag)?;
    Ok(Retrained {
        model: trained,
        anchor: new_anchor,
        report,
    })
}
