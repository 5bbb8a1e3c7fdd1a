//! From-scratch binary classifiers with hand-written backpropagation.
//!
//! Both models keep every trainable value in one flat `Vec<f64>`. That makes
//! the optimizer, the Fisher estimate and the EWC penalty model-agnostic:
//! they only ever see a parameter slice and a gradient of the same length.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::features::FeatureBundle;
use crate::math;

pub mod gcn;
pub mod gradcheck;
pub mod mlp;
pub mod optim;
pub mod train;

pub use gcn::Gcn;
pub use mlp::Mlp;
pub use optim::{Optimizer, OptimizerKind};
pub use train::{ClassWeighting, TrainConfig, TrainReport};

/// Loss weights indexed by class: `[normal, anomaly]`.
pub type ClassWeights = [f64; 2];

/// Output of a training-mode pass over one batch.
#[derive(Clone, Debug)]
pub struct BatchPass {
    /// Mean class-weighted binary cross-entropy.
    pub loss: f64,
    pub grad: Vec<f64>,
    /// Batch-norm moments to fold into the running statistics.
    pub(crate) moments: Option<[(Vec<f64>, Vec<f64>); 2]>,
}

impl BatchPass {
    /// A pass that carries no running statistics.
    pub fn new(loss: f64, grad: Vec<f64>) -> Self {
        Self { loss, grad, moments: None }
    }
}

/// A differentiable classifier producing the anomaly probability of a
/// [`FeatureBundle`].
pub trait BinaryModel: Clone {
    fn params(&self) -> &[f64];

    fn params_mut(&mut self) -> &mut [f64];

    /// Training-mode forward and backward pass. Does not touch running state;
    /// see [`BinaryModel::absorb`].
    fn batch_loss_grad(&self, batch: &[&FeatureBundle], weights: ClassWeights) -> Result<BatchPass>;

    /// [`BinaryModel::batch_loss_grad`] with normalization statistics held
    /// at their running values, for fine-tuning on small batches. Models
    /// without such statistics train as usual.
    fn frozen_loss_grad(&self, batch: &[&FeatureBundle], weights: ClassWeights) -> Result<BatchPass> {
        self.batch_loss_grad(batch, weights)
    }

    /// Loss of [`BinaryModel::batch_loss_grad`] without the backward pass.
    fn batch_loss(&self, batch: &[&FeatureBundle], weights: ClassWeights) -> Result<f64>;

    /// Folds non-trainable statistics gathered in a pass into the model.
    fn absorb(&mut self, _pass: &BatchPass) {}

    /// Inference-mode logit and its gradient with respect to the parameters.
    fn logit_grad(&self, sample: &FeatureBundle) -> Result<(f64, Vec<f64>)>;

    /// Inference-mode anomaly probability.
    fn predict(&self, sample: &FeatureBundle) -> Result<f64>;
}

pub(crate) fn target(sample: &FeatureBundle) -> Result<f64> {
    match sample.label {
        Some(0) => Ok(0.0),
        Some(1) => Ok(1.0),
        _ => Err(Error::MissingLabel),
    }
}

/// Weighted BCE of one logit and its derivative with respect to the logit.
pub(crate) fn bce_with_logit(z: f64, y: f64, w: f64) -> (f64, f64) {
    (w * (math::softplus(z) - y * z), w * (math::sigmoid(z) - y))
}

pub(crate) fn class_weight(weights: ClassWeights, y: f64) -> f64 {
    if y > 0.5 {
        weights[1]
    } else {
        weights[0]
    }
}

/// `out[i][o] = b[o] + sum_k input[i][k] * w[o][k]` for row-major inputs.
pub(crate) fn affine(input: &[f64], rows: usize, in_dim: usize, w: &[f64], b: &[f64]) -> Vec<f64> {
    let out_dim = b.len();
    let mut out = Vec::with_capacity(rows * out_dim);
    for i in 0..rows {
        let x = &input[i * in_dim..(i + 1) * in_dim];
        for o in 0..out_dim {
            let wrow = &w[o * in_dim..(o + 1) * in_dim];
            out.push(b[o] + x.iter().zip(wrow).map(|(a, b)| a * b).sum::<f64>());
        }
    }
    out
}

/// Accumulates the weight and bias gradients of [`affine`] and returns the
/// gradient with respect to its input when `want_input` is set.
pub(crate) fn affine_backward(
    input: &[f64],
    rows: usize,
    in_dim: usize,
    w: &[f64],
    d_out: &[f64],
    gw: &mut [f64],
    gb: &mut [f64],
    want_input: bool,
) -> Vec<f64> {
    let out_dim = gb.len();
    let mut d_in = if want_input { alloc::vec![0.0; rows * in_dim] } else { Vec::new() };
    for i in 0..rows {
        let x = &input[i * in_dim..(i + 1) * in_dim];
        for o in 0..out_dim {
            let d = d_out[i * out_dim + o];
            if d == 0.0 {
                continue;
            }
            gb[o] += d;
            let grow = &mut gw[o * in_dim..(o + 1) * in_dim];
            for (g, xv) in grow.iter_mut().zip(x) {
                *g += d * xv;
            }
            if want_input {
                let wrow = &w[o * in_dim..(o + 1) * in_dim];
                for (di, wv) in d_in[i * in_dim..(i + 1) * in_dim].iter_mut().zip(wrow) {
                    *di += d * wv;
                }
            }
        }
    }
    d_in
}

pub(crate) fn relu_in_place(v: &mut [f64]) {
    for x in v {
        if *x < 0.0 {
            *x = 0.0;
        }
    }
}

/// Zeroes `grad` wherever the pre-activation was not positive.
pub(crate) fn relu_backward(pre: &[f64], grad: &mut [f64]) {
    for (g, &z) in grad.iter_mut().zip(pre) {
        if z <= 0.0 {
            *g = 0.0;
        }
    }
}

pub(crate) fn uniform_init(rng: &mut rand_chacha::ChaCha8Rng, out: &mut [f64], fan_in: usize) {
    use rand::Rng;
    if fan_in == 0 {
        return;
    }
    let limit = math::sqrt(6.0 / fan_in as f64);
    for v in out {
        *v = rng.gen_range(-limit..limit);
    }
}
