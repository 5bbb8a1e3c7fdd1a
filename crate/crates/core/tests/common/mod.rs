#![allow(dead_code)]

use logfuse_core::embed::TokenEmbedder;
use logfuse_core::graph::EventGraph;
use logfuse_core::nn::{BatchPass, BinaryModel, ClassWeights};
use logfuse_core::{FeatureBundle, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Bundle with a dense vector and a trivial one-node graph.
pub fn dense(x: Vec<f64>, label: u8) -> FeatureBundle {
    FeatureBundle {
        x,
        graph: EventGraph::star::<&str>("E1", &[], &TokenEmbedder::new(1)),
        label: Some(label),
    }
}

/// Star graph with `leaves` leaves and uniform random node features.
pub fn random_star(rng: &mut ChaCha8Rng, dim: usize, leaves: usize, label: u8) -> FeatureBundle {
    let n = leaves + 1;
    FeatureBundle {
        x: Vec::new(),
        graph: EventGraph {
            labels: (0..n).map(|i| format!("n{i}")).collect(),
            edges: (1..n).map(|i| (0, i)).collect(),
            features: (0..n * dim).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            dim,
        },
        label: Some(label),
    }
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Logistic regression on the dense vector, with its gradients written out
/// by hand. Parameters are the weights followed by the bias.
#[derive(Clone, Debug)]
pub struct Logistic {
    pub w: Vec<f64>,
}

impl Logistic {
    pub fn logit(&self, x: &[f64]) -> f64 {
        let d = self.w.len() - 1;
        self.w[d] + x.iter().zip(&self.w[..d]).map(|(a, b)| a * b).sum::<f64>()
    }
}

impl BinaryModel for Logistic {
    fn params(&self) -> &[f64] {
        &self.w
    }

    fn params_mut(&mut self) -> &mut [f64] {
        &mut self.w
    }

    fn batch_loss_grad(&self, batch: &[&FeatureBundle], weights: ClassWeights) -> Result<BatchPass> {
        let n = batch.len() as f64;
        let d = self.w.len() - 1;
        let mut grad = vec![0.0; self.w.len()];
        let mut loss = 0.0;
        for s in batch {
            let y = s.label.unwrap() as f64;
            let cw = weights[s.label.unwrap() as usize];
            let p = sigmoid(self.logit(&s.x));
            loss -= cw * (y * p.ln() + (1.0 - y) * (1.0 - p).ln()) / n;
            for k in 0..d {
                grad[k] += cw * (p - y) * s.x[k] / n;
            }
            grad[d] += cw * (p - y) / n;
        }
        Ok(BatchPass::new(loss, grad))
    }

    fn batch_loss(&self, batch: &[&FeatureBundle], weights: ClassWeights) -> Result<f64> {
        Ok(self.batch_loss_grad(batch, weights)?.loss)
    }

    fn logit_grad(&self, sample: &FeatureBundle) -> Result<(f64, Vec<f64>)> {
        let mut g = sample.x.clone();
        g.push(1.0);
        Ok((self.logit(&sample.x), g))
    }

    fn predict(&self, sample: &FeatureBundle) -> Result<f64> {
        Ok(sigmoid(self.logit(&sample.x)))
    }
}
