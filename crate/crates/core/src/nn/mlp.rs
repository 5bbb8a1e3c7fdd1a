//! Two hidden layers (64 and 32 ReLU units), each followed by batch
//! normalization, and a sigmoid output unit.

use alloc::vec;
use alloc::vec::Vec;
use core::ops::Range;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{affine, affine_backward, bce_with_logit, class_weight, relu_backward, relu_in_place, target};
use super::{BatchPass, BinaryModel, ClassWeights};
use crate::error::{Error, Result};
use crate::features::FeatureBundle;
use crate::math;

pub const HIDDEN: [usize; 2] = [64, 32];
pub const BN_MOMENTUM: f64 = 0.9;
pub const BN_EPSILON: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics; running statistics are updated.
    Train,
    /// Running statistics.
    Infer,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    x_dim: usize,
    hidden: [usize; 2],
    values: Vec<f64>,
    running_mean: [Vec<f64>; 2],
    running_var: [Vec<f64>; 2],
    momentum: f64,
    epsilon: f64,
    seed: u64,
}

struct Layout {
    w: [Range<usize>; 3],
    b: [Range<usize>; 3],
    gamma: [Range<usize>; 2],
    beta: [Range<usize>; 2],
    len: usize,
}

impl Layout {
    fn new(x_dim: usize, hidden: [usize; 2]) -> Self {
        let mut at = 0;
        let mut take = |n: usize| {
            let r = at..at + n;
            at += n;
            r
        };
        let w0 = take(hidden[0] * x_dim);
        let b0 = take(hidden[0]);
        let g0 = take(hidden[0]);
        let be0 = take(hidden[0]);
        let w1 = take(hidden[1] * hidden[0]);
        let b1 = take(hidden[1]);
        let g1 = take(hidden[1]);
        let be1 = take(hidden[1]);
        let w2 = take(hidden[1]);
        let b2 = take(1);
        Self {
            w: [w0, w1, w2],
            b: [b0, b1, b2],
            gamma: [g0, g1],
            beta: [be0, be1],
            len: at,
        }
    }
}

/// Intermediate values of a forward pass, kept for the backward pass.
struct Trace {
    rows: usize,
    /// Input of each hidden layer's affine map.
    inputs: [Vec<f64>; 2],
    pre: [Vec<f64>; 2],
    xhat: [Vec<f64>; 2],
    inv_std: [Vec<f64>; 2],
    moments: [(Vec<f64>, Vec<f64>); 2],
    /// Output of the second normalization layer.
    top: Vec<f64>,
    logits: Vec<f64>,
}

impl Mlp {
    pub fn new(x_dim: usize, seed: u64) -> Self {
        Self::with_hidden(x_dim, HIDDEN, seed)
    }

    pub fn with_hidden(x_dim: usize, hidden: [usize; 2], seed: u64) -> Self {
        let layout = Layout::new(x_dim, hidden);
        let mut values = vec![0.0; layout.len];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let fan_in = [x_dim, hidden[0], hidden[1]];
        for (l, fan) in fan_in.iter().enumerate() {
            super::uniform_init(&mut rng, &mut values[layout.w[l].clone()], *fan);
        }
        for l in 0..2 {
            values[layout.gamma[l].clone()].fill(1.0);
        }
        Self {
            x_dim,
            hidden,
            values,
            running_mean: [vec![0.0; hidden[0]], vec![0.0; hidden[1]]],
            running_var: [vec![1.0; hidden[0]], vec![1.0; hidden[1]]],
            momentum: BN_MOMENTUM,
            epsilon: BN_EPSILON,
            seed,
        }
    }

    /// Same shape with every trainable value zeroed.
    pub fn zeroed(&self) -> Self {
        let mut m = self.clone();
        m.values.fill(0.0);
        m
    }

    pub fn x_dim(&self) -> usize {
        self.x_dim
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn running_stats(&self) -> (&[Vec<f64>; 2], &[Vec<f64>; 2]) {
        (&self.running_mean, &self.running_var)
    }

    /// Shape and finiteness checks for deserialized parameters.
    pub fn validate(&self) -> Result<()> {
        let layout = Layout::new(self.x_dim, self.hidden);
        if self.values.len() != layout.len {
            return Err(Error::Shape {
                expected: layout.len,
                actual: self.values.len(),
            });
        }
        for l in 0..2 {
            if self.running_mean[l].len() != self.hidden[l] || self.running_var[l].len() != self.hidden[l] {
                return Err(Error::Schema("batch-norm statistics do not match layer width".into()));
            }
            if self.running_var[l].iter().any(|&v| !(v > 0.0)) {
                return Err(Error::Schema("batch-norm running variance must be positive".into()));
            }
        }
        if self.values.iter().chain(self.running_mean.iter().flatten()).any(|v| !v.is_finite()) {
            return Err(Error::Schema("non-finite MLP parameter".into()));
        }
        Ok(())
    }

    fn check_rows(&self, x: &[f64], rows: usize) -> Result<()> {
        if x.len() != rows * self.x_dim {
            return Err(Error::Shape {
                expected: rows * self.x_dim,
                actual: x.len(),
            });
        }
        Ok(())
    }

    fn run(&self, x: &[f64], rows: usize, mode: Mode) -> Trace {
        let layout = Layout::new(self.x_dim, self.hidden);
        let p = &self.values;
        let mut input = x.to_vec();
        let mut in_dim = self.x_dim;
        let mut inputs: [Vec<f64>; 2] = Default::default();
        let mut pre: [Vec<f64>; 2] = Default::default();
        let mut xhat: [Vec<f64>; 2] = Default::default();
        let mut inv_std: [Vec<f64>; 2] = Default::default();
        let mut moments: [(Vec<f64>, Vec<f64>); 2] = Default::default();

        for l in 0..2 {
            let width = self.hidden[l];
            let z = affine(&input, rows, in_dim, &p[layout.w[l].clone()], &p[layout.b[l].clone()]);
            let mut a = z.clone();
            relu_in_place(&mut a);

            let (mean, var) = match mode {
                Mode::Train => batch_moments(&a, rows, width),
                Mode::Infer => (self.running_mean[l].clone(), self.running_var[l].clone()),
            };
            let inv: Vec<f64> = var.iter().map(|v| 1.0 / math::sqrt(v + self.epsilon)).collect();
            let gamma = &p[layout.gamma[l].clone()];
            let beta = &p[layout.beta[l].clone()];
            let mut normed = vec![0.0; rows * width];
            let mut out = vec![0.0; rows * width];
            for i in 0..rows {
                for j in 0..width {
                    let k = i * width + j;
                    normed[k] = (a[k] - mean[j]) * inv[j];
                    out[k] = gamma[j] * normed[k] + beta[j];
                }
            }
            inputs[l] = core::mem::replace(&mut input, out);
            in_dim = width;
            pre[l] = z;
            xhat[l] = normed;
            inv_std[l] = inv;
            moments[l] = (mean, var);
        }
        let logits = affine(&input, rows, in_dim, &p[layout.w[2].clone()], &p[layout.b[2].clone()]);
        Trace {
            rows,
            inputs,
            pre,
            xhat,
            inv_std,
            moments,
            top: input,
            logits,
        }
    }

    fn backward(&self, trace: &Trace, d_logits: &[f64], mode: Mode) -> Vec<f64> {
        let layout = Layout::new(self.x_dim, self.hidden);
        let p = &self.values;
        let rows = trace.rows;
        let mut grad = vec![0.0; layout.len];

        let (gw, rest) = split_pair(&mut grad, layout.w[2].clone(), layout.b[2].clone());
        let mut d_top = affine_backward(&trace.top, rows, self.hidden[1], &p[layout.w[2].clone()], d_logits, gw, rest, true);

        for l in (0..2).rev() {
            let width = self.hidden[l];
            let gamma = &p[layout.gamma[l].clone()];
            let xhat = &trace.xhat[l];
            let inv = &trace.inv_std[l];
            let mut d_gamma = vec![0.0; width];
            let mut d_beta = vec![0.0; width];
            let mut d_xhat = vec![0.0; rows * width];
            for i in 0..rows {
                for j in 0..width {
                    let k = i * width + j;
                    d_gamma[j] += d_top[k] * xhat[k];
                    d_beta[j] += d_top[k];
                    d_xhat[k] = d_top[k] * gamma[j];
                }
            }
            grad[layout.gamma[l].clone()].copy_from_slice(&d_gamma);
            grad[layout.beta[l].clone()].copy_from_slice(&d_beta);

            let mut d_a = vec![0.0; rows * width];
            match mode {
                Mode::Train => {
                    let n = rows as f64;
                    for j in 0..width {
                        let mut sum = 0.0;
                        let mut sum_x = 0.0;
                        for i in 0..rows {
                            sum += d_xhat[i * width + j];
                            sum_x += d_xhat[i * width + j] * xhat[i * width + j];
                        }
                        for i in 0..rows {
                            let k = i * width + j;
                            d_a[k] = inv[j] / n * (n * d_xhat[k] - sum - xhat[k] * sum_x);
                        }
                    }
                }
                Mode::Infer => {
                    for i in 0..rows {
                        for j in 0..width {
                            d_a[i * width + j] = d_xhat[i * width + j] * inv[j];
                        }
                    }
                }
            }
            relu_backward(&trace.pre[l], &mut d_a);

            let in_dim = if l == 0 { self.x_dim } else { self.hidden[0] };
            let (gw, gb) = split_pair(&mut grad, layout.w[l].clone(), layout.b[l].clone());
            d_top = affine_backward(&trace.inputs[l], rows, in_dim, &p[layout.w[l].clone()], &d_a, gw, gb, l > 0);
        }
        grad
    }

    /// Anomaly probability per row.
    ///
    /// `Mode::Train` normalizes with the batch moments and updates the
    /// running statistics; `Mode::Infer` uses the running statistics.
    pub fn forward(&mut self, x: &[f64], rows: usize, mode: Mode) -> Result<Vec<f64>> {
        self.check_rows(x, rows)?;
        let trace = self.run(x, rows, mode);
        if mode == Mode::Train {
            self.update_running(&trace.moments);
        }
        Ok(trace.logits.iter().map(|&z| math::sigmoid(z)).collect())
    }

    /// Inference-mode anomaly probability per row.
    pub fn predict_rows(&self, x: &[f64], rows: usize) -> Result<Vec<f64>> {
        self.check_rows(x, rows)?;
        let trace = self.run(x, rows, Mode::Infer);
        Ok(trace.logits.iter().map(|&z| math::sigmoid(z)).collect())
    }

    /// Batch-normalized activations of both hidden layers before scale and
    /// shift, computed with batch moments.
    pub fn normalized_hidden(&self, x: &[f64], rows: usize) -> Result<[Vec<f64>; 2]> {
        self.check_rows(x, rows)?;
        Ok(self.run(x, rows, Mode::Train).xhat)
    }

    fn pass(&self, batch: &[&FeatureBundle], weights: ClassWeights, mode: Mode) -> Result<BatchPass> {
        let x = self.stack(batch)?;
        let trace = self.run(&x, batch.len(), mode);
        let n = batch.len() as f64;
        let mut loss = 0.0;
        let mut d_logits = Vec::with_capacity(batch.len());
        for (s, &z) in batch.iter().zip(&trace.logits) {
            let y = target(s)?;
            let (l, d) = bce_with_logit(z, y, class_weight(weights, y));
            loss += l / n;
            d_logits.push(d / n);
        }
        let grad = self.backward(&trace, &d_logits, mode);
        Ok(BatchPass {
            loss,
            grad,
            moments: (mode == Mode::Train).then_some(trace.moments),
        })
    }

    fn update_running(&mut self, moments: &[(Vec<f64>, Vec<f64>); 2]) {
        let m = self.momentum;
        for l in 0..2 {
            for (r, b) in self.running_mean[l].iter_mut().zip(&moments[l].0) {
                *r = m * *r + (1.0 - m) * b;
            }
            for (r, b) in self.running_var[l].iter_mut().zip(&moments[l].1) {
                *r = m * *r + (1.0 - m) * b;
            }
        }
    }

    fn stack(&self, batch: &[&FeatureBundle]) -> Result<Vec<f64>> {
        let mut x = Vec::with_capacity(batch.len() * self.x_dim);
        for s in batch {
            if s.x.len() != self.x_dim {
                return Err(Error::Shape {
                    expected: self.x_dim,
                    actual: s.x.len(),
                });
            }
            x.extend_from_slice(&s.x);
        }
        Ok(x)
    }
}

fn batch_moments(a: &[f64], rows: usize, width: usize) -> (Vec<f64>, Vec<f64>) {
    let n = rows.max(1) as f64;
    let mut mean = vec![0.0; width];
    for i in 0..rows {
        for j in 0..width {
            mean[j] += a[i * width + j];
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0.0; width];
    for i in 0..rows {
        for j in 0..width {
            let d = a[i * width + j] - mean[j];
            var[j] += d * d;
        }
    }
    var.iter_mut().for_each(|v| *v /= n);
    (mean, var)
}

/// Two disjoint mutable windows of the gradient; `a` must precede `b`.
pub(super) fn split_pair(buf: &mut [f64], a: Range<usize>, b: Range<usize>) -> (&mut [f64], &mut [f64]) {
    debug_assert!(a.end <= b.start);
    let (head, tail) = buf.split_at_mut(b.start);
    (&mut head[a], &mut tail[..b.end - b.start])
}

impl BinaryModel for Mlp {
    fn params(&self) -> &[f64] {
        &self.values
    }

    fn params_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    fn batch_loss_grad(&self, batch: &[&FeatureBundle], weights: ClassWeights) -> Result<BatchPass> {
        self.pass(batch, weights, Mode::Train)
    }

    fn frozen_loss_grad(&self, batch: &[&FeatureBundle], weights: ClassWeights) -> Result<BatchPass> {
        self.pass(batch, weights, Mode::Infer)
    }

    fn batch_loss(&self, batch: &[&FeatureBundle], weights: ClassWeights) -> Result<f64> {
        let x = self.stack(batch)?;
        let trace = self.run(&x, batch.len(), Mode::Train);
        let n = batch.len() as f64;
        batch.iter().zip(&trace.logits).try_fold(0.0, |acc, (s, &z)| {
            let y = target(s)?;
            Ok(acc + bce_with_logit(z, y, class_weight(weights, y)).0 / n)
        })
    }

    fn absorb(&mut self, pass: &BatchPass) {
        if let Some(m) = &pass.moments {
            self.update_running(m);
        }
    }

    fn logit_grad(&self, sample: &FeatureBundle) -> Result<(f64, Vec<f64>)> {
        let x = self.stack(&[sample])?;
        let trace = self.run(&x, 1, Mode::Infer);
        let grad = self.backward(&trace, &[1.0], Mode::Infer);
        Ok((trace.logits[0], grad))
    }

    fn predict(&self, sample: &FeatureBundle) -> Result<f64> {
        Ok(self.predict_rows(&sample.x, 1)?[0])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embed::TokenEmbedder;
    use crate::graph::EventGraph;
    use rand::Rng;

    fn bundle(x: Vec<f64>, label: u8) -> FeatureBundle {
        FeatureBundle {
            x,
            graph: EventGraph::star::<&str>("E1", &[], &TokenEmbedder::new(1)),
            label: Some(label),
        }
    }

    #[test]
    fn zero_params_give_half() {
        let m = Mlp::new(3, 1).zeroed();
        let p = m.predict_rows(&[1.0, -2.0, 5.0, 0.0, 0.0, 0.0], 2).unwrap();
        assert_eq!(p, [0.5, 0.5]);
    }

    #[test]
    fn infer_is_deterministic_and_shaped() {
        let m = Mlp::new(3, 1);
        let x: Vec<f64> = (0..15).map(|i| i as f64 * 0.3).collect();
        let a = m.predict_rows(&x, 5).unwrap();
        assert_eq!(a.len(), 5);
        assert_eq!(a, m.predict_rows(&x, 5).unwrap());
        assert!(a.iter().all(|p| (0.0..=1.0).contains(p)));
    }

    #[test]
    fn dimension_mismatch() {
        let mut m = Mlp::new(3, 1);
        assert!(matches!(m.forward(&[1.0, 2.0], 1, Mode::Infer), Err(Error::Shape { .. })));
        assert!(matches!(m.predict(&bundle(vec![1.0], 0)), Err(Error::Shape { .. })));
    }

    #[test]
    fn train_mode_updates_running_stats() {
        let mut m = Mlp::new(2, 3);
        let before = m.running_stats().0.clone();
        m.forward(&[1.0, 2.0, -1.0, 0.5, 3.0, -2.0], 3, Mode::Train).unwrap();
        assert_ne!(&before, m.running_stats().0);
        let frozen = m.clone();
        m.forward(&[1.0, 2.0], 1, Mode::Infer).unwrap();
        assert_eq!(frozen, m);
    }

    #[test]
    fn frozen_pass_uses_running_stats() {
        let mut m = Mlp::new(2, 3);
        m.forward(&[1.0, 2.0, -1.0, 0.5, 3.0, -2.0], 3, Mode::Train).unwrap();
        let samples = [bundle(vec![0.3, -1.0], 1), bundle(vec![2.0, 0.5], 0), bundle(vec![-0.7, 1.5], 1)];
        let batch: Vec<&FeatureBundle> = samples.iter().collect();
        let w = [1.0, 2.0];
        let pass = m.frozen_loss_grad(&batch, w).unwrap();
        assert!(pass.moments.is_none());
        // the loss is the infer-mode loss, so central differences of it
        // must match the frozen gradient
        let loss = |m: &Mlp| {
            let x = m.stack(&batch).unwrap();
            let t = m.run(&x, 3, Mode::Infer);
            batch.iter().zip(&t.logits).map(|(s, &z)| {
                let y = target(s).unwrap();
                bce_with_logit(z, y, class_weight(w, y)).0 / 3.0
            }).sum::<f64>()
        };
        assert!((loss(&m) - pass.loss).abs() < 1e-12);
        let h = 1e-6;
        for i in (0..m.values.len()).step_by(7) {
            let (mut a, mut b) = (m.clone(), m.clone());
            a.values[i] += h;
            b.values[i] -= h;
            let fd = (loss(&a) - loss(&b)) / (2.0 * h);
            assert!((fd - pass.grad[i]).abs() <= 1e-6 * (1.0 + fd.abs()), "param {i}: {fd} vs {}", pass.grad[i]);
        }
    }

    #[test]
    fn batch_norm_standardizes() {
        let mut m = Mlp::new(4, 11);
        let g0 = Layout::new(4, HIDDEN).gamma[0].clone();
        m.values[g0].fill(20.0);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let rows = 64;
        // wide inputs keep the activation variance far above epsilon, where
        // var / (var + eps) is within 1e-5 of one
        let x: Vec<f64> = (0..rows * 4).map(|_| rng.gen_range(-50.0..50.0)).collect();
        let hidden = m.normalized_hidden(&x, rows).unwrap();
        for (l, h) in hidden.iter().enumerate() {
            let width = HIDDEN[l];
            let (mean, var) = batch_moments(h, rows, width);
            let raw = batch_moments(&{
                let t = m.run(&x, rows, Mode::Train);
                let mut a = t.pre[l].clone();
                relu_in_place(&mut a);
                a
            }, rows, width);
            let mut checked = 0;
            for j in 0..width {
                assert!(mean[j].abs() < 1e-5, "layer {l} unit {j} mean {}", mean[j]);
                assert!((var[j] - raw.1[j] / (raw.1[j] + BN_EPSILON)).abs() < 1e-9);
                if raw.1[j] >= 1.0 {
                    assert!((var[j] - 1.0).abs() < 1e-5, "layer {l} unit {j} var {}", var[j]);
                    checked += 1;
                }
            }
            assert!(checked > width / 2, "layer {l}: only {checked} units checked");
        }
    }

    #[test]
    fn logit_grad_matches_bias_sensitivity() {
        let m = Mlp::new(2, 9);
        let s = bundle(vec![0.3, -0.7], 0);
        let (_, g) = m.logit_grad(&s).unwrap();
        let layout = Layout::new(2, HIDDEN);
        assert_eq!(g[layout.b[2].start], 1.0);
    }
}
