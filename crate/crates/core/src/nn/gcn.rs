//! Graph convolutional network over per-event star graphs: two 64-unit
//! convolutions `ReLU(Â H W + b)`, mean pooling over nodes, dense layers of
//! 32 and 16 ReLU units and a sigmoid output.

use alloc::vec;
use alloc::vec::Vec;
use core::ops::Range;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::mlp::split_pair;
use super::{affine, affine_backward, bce_with_logit, class_weight, relu_backward, relu_in_place, target};
use super::{BatchPass, BinaryModel, ClassWeights};
use crate::error::{Error, Result};
use crate::features::FeatureBundle;
use crate::graph::EventGraph;
use crate::math;

pub const CONV: [usize; 2] = [64, 64];
pub const DENSE: [usize; 2] = [32, 16];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Gcn {
    dim: usize,
    values: Vec<f64>,
    seed: u64,
}

/// Layer widths in order: conv, conv, dense, dense, output.
fn widths(dim: usize) -> [(usize, usize); 5] {
    [
        (dim, CONV[0]),
        (CONV[0], CONV[1]),
        (CONV[1], DENSE[0]),
        (DENSE[0], DENSE[1]),
        (DENSE[1], 1),
    ]
}

struct Layout {
    w: [Range<usize>; 5],
    b: [Range<usize>; 5],
    len: usize,
}

impl Layout {
    fn new(dim: usize) -> Self {
        let mut at = 0;
        let mut w: [Range<usize>; 5] = Default::default();
        let mut b: [Range<usize>; 5] = Default::default();
        for (l, (fan_in, out)) in widths(dim).into_iter().enumerate() {
            w[l] = at..at + fan_in * out;
            at += fan_in * out;
            b[l] = at..at + out;
            at += out;
        }
        Self { w, b, len: at }
    }
}

struct Trace {
    n: usize,
    adj: Vec<f64>,
    /// `Â H` feeding each convolution.
    mixed: [Vec<f64>; 2],
    conv_pre: [Vec<f64>; 2],
    pooled: Vec<f64>,
    dense_in: [Vec<f64>; 3],
    dense_pre: [Vec<f64>; 2],
    logit: f64,
}

/// `Â H` for row-major `H` with `width` columns.
fn propagate(adj: &[f64], n: usize, h: &[f64], width: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * width];
    for i in 0..n {
        let row = &mut out[i * width..(i + 1) * width];
        for j in 0..n {
            let a = adj[i * n + j];
            if a == 0.0 {
                continue;
            }
            for (o, v) in row.iter_mut().zip(&h[j * width..(j + 1) * width]) {
                *o += a * v;
            }
        }
    }
    out
}

impl Gcn {
    pub fn new(dim: usize, seed: u64) -> Self {
        let layout = Layout::new(dim);
        let mut values = vec![0.0; layout.len];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for (l, (fan_in, _)) in widths(dim).into_iter().enumerate() {
            super::uniform_init(&mut rng, &mut values[layout.w[l].clone()], fan_in);
        }
        Self { dim, values, seed }
    }

    pub fn zeroed(&self) -> Self {
        let mut g = self.clone();
        g.values.fill(0.0);
        g
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn validate(&self) -> Result<()> {
        let layout = Layout::new(self.dim);
        if self.values.len() != layout.len {
            return Err(Error::Shape {
                expected: layout.len,
                actual: self.values.len(),
            });
        }
        if self.values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Schema("non-finite GCN parameter".into()));
        }
        Ok(())
    }

    fn check(&self, graph: &EventGraph) -> Result<()> {
        graph.validate()?;
        if graph.dim != self.dim {
            return Err(Error::Shape {
                expected: self.dim,
                actual: graph.dim,
            });
        }
        Ok(())
    }

    fn run(&self, graph: &EventGraph) -> Trace {
        let layout = Layout::new(self.dim);
        let p = &self.values;
        let n = graph.node_count();
        let adj = graph.normalized_adjacency();

        let mut h = graph.features.clone();
        let mut width = self.dim;
        let mut mixed: [Vec<f64>; 2] = Default::default();
        let mut conv_pre: [Vec<f64>; 2] = Default::default();
        for l in 0..2 {
            let m = propagate(&adj, n, &h, width);
            let z = affine(&m, n, width, &p[layout.w[l].clone()], &p[layout.b[l].clone()]);
            h = z.clone();
            relu_in_place(&mut h);
            mixed[l] = m;
            conv_pre[l] = z;
            width = CONV[l];
        }

        let mut pooled = vec![0.0; width];
        for i in 0..n {
            for (acc, v) in pooled.iter_mut().zip(&h[i * width..(i + 1) * width]) {
                *acc += v;
            }
        }
        pooled.iter_mut().for_each(|v| *v /= n as f64);

        let mut dense_in: [Vec<f64>; 3] = Default::default();
        let mut dense_pre: [Vec<f64>; 2] = Default::default();
        let mut x = pooled.clone();
        for l in 0..2 {
            let (fan_in, _) = widths(self.dim)[l + 2];
            let z = affine(&x, 1, fan_in, &p[layout.w[l + 2].clone()], &p[layout.b[l + 2].clone()]);
            dense_in[l] = core::mem::replace(&mut x, z.clone());
            relu_in_place(&mut x);
            dense_pre[l] = z;
        }
        let logit = affine(&x, 1, DENSE[1], &p[layout.w[4].clone()], &p[layout.b[4].clone()])[0];
        dense_in[2] = x;
        Trace {
            n,
            adj,
            mixed,
            conv_pre,
            pooled,
            dense_in,
            dense_pre,
            logit,
        }
    }

    /// Adds `d_logit` times the parameter gradient of the logit into `grad`.
    fn backward(&self, trace: &Trace, d_logit: f64, grad: &mut [f64]) {
        let layout = Layout::new(self.dim);
        let p = &self.values;
        let w = widths(self.dim);

        let mut d = vec![d_logit];
        for l in (2..5).rev() {
            let (fan_in, _) = w[l];
            let (gw, gb) = split_pair(grad, layout.w[l].clone(), layout.b[l].clone());
            let input = if l == 2 { &trace.pooled } else { &trace.dense_in[l - 2] };
            d = affine_backward(input, 1, fan_in, &p[layout.w[l].clone()], &d, gw, gb, true);
            if l > 2 {
                relu_backward(&trace.dense_pre[l - 3], &mut d);
            }
        }

        // mean pooling spreads the pooled gradient evenly over the nodes
        let n = trace.n;
        let mut d_h: Vec<f64> = (0..n).flat_map(|_| d.iter().map(|v| v / n as f64)).collect();
        for l in (0..2).rev() {
            relu_backward(&trace.conv_pre[l], &mut d_h);
            let fan_in = w[l].0;
            let (gw, gb) = split_pair(grad, layout.w[l].clone(), layout.b[l].clone());
            let d_m = affine_backward(&trace.mixed[l], n, fan_in, &p[layout.w[l].clone()], &d_h, gw, gb, l > 0);
            if l > 0 {
                // Â is symmetric, so the transpose product is another propagation
                d_h = propagate(&trace.adj, n, &d_m, fan_in);
            }
        }
    }

    /// Anomaly probability of one graph.
    pub fn forward(&self, graph: &EventGraph) -> Result<f64> {
        self.check(graph)?;
        Ok(math::sigmoid(self.run(graph).logit))
    }

    /// The dense head (two ReLU layers and the sigmoid) applied to a pooled
    /// 64-vector.
    pub fn head(&self, pooled: &[f64]) -> f64 {
        let layout = Layout::new(self.dim);
        let p = &self.values;
        let mut x = pooled.to_vec();
        for l in 2..4 {
            let fan_in = widths(self.dim)[l].0;
            x = affine(&x, 1, fan_in, &p[layout.w[l].clone()], &p[layout.b[l].clone()]);
            relu_in_place(&mut x);
        }
        math::sigmoid(affine(&x, 1, DENSE[1], &p[layout.w[4].clone()], &p[layout.b[4].clone()])[0])
    }

    /// The two convolutions applied with a fixed propagation matrix of one,
    /// i.e. to an isolated node.
    pub fn conv_isolated(&self, features: &[f64]) -> Vec<f64> {
        let layout = Layout::new(self.dim);
        let p = &self.values;
        let mut h = features.to_vec();
        let mut width = self.dim;
        for l in 0..2 {
            h = affine(&h, 1, width, &p[layout.w[l].clone()], &p[layout.b[l].clone()]);
            relu_in_place(&mut h);
            width = CONV[l];
        }
        h
    }
}

impl BinaryModel for Gcn {
    fn params(&self) -> &[f64] {
        &self.values
    }

    fn params_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    fn batch_loss_grad(&self, batch: &[&FeatureBundle], weights: ClassWeights) -> Result<BatchPass> {
        let mut grad = vec![0.0; self.values.len()];
        let n = batch.len() as f64;
        let mut loss = 0.0;
        for s in batch {
            self.check(&s.graph)?;
            let y = target(s)?;
            let trace = self.run(&s.graph);
            let (l, d) = bce_with_logit(trace.logit, y, class_weight(weights, y));
            loss += l / n;
            self.backward(&trace, d / n, &mut grad);
        }
        Ok(BatchPass {
            loss,
            grad,
            moments: None,
        })
    }

    fn batch_loss(&self, batch: &[&FeatureBundle], weights: ClassWeights) -> Result<f64> {
        let n = batch.len() as f64;
        batch.iter().try_fold(0.0, |acc, s| {
            self.check(&s.graph)?;
            let y = target(s)?;
            let z = self.run(&s.graph).logit;
            Ok(acc + bce_with_logit(z, y, class_weight(weights, y)).0 / n)
        })
    }

    fn logit_grad(&self, sample: &FeatureBundle) -> Result<(f64, Vec<f64>)> {
        self.check(&sample.graph)?;
        let trace = self.run(&sample.graph);
        let mut grad = vec![0.0; self.values.len()];
        self.backward(&trace, 1.0, &mut grad);
        Ok((trace.logit, grad))
    }

    fn predict(&self, sample: &FeatureBundle) -> Result<f64> {
        self.forward(&sample.graph)
    }
}
