//! Importance-weighted fusion of the two models and evaluation metrics.
//!
//! Both models output the probability of an anomaly. Fusion works on the
//! complementary normal-class probabilities: the fused score `F` is the
//! normal-class score, and a record is flagged when `F <= 0.5`.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{Column, WeightDictionary};

/// Share of importance held by the dense columns (`s0`, the MLP) and by the
/// parameter list (`s1`, the GCN).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FusionWeights {
    pub s0: f64,
    pub s1: f64,
}

impl FusionWeights {
    pub fn relative_scores(weights: &WeightDictionary) -> Result<Self> {
        let total: f64 = weights.weights.values().sum();
        if weights.weights.is_empty() || !(total > 0.0) {
            return Err(Error::ZeroWeights);
        }
        let dense: f64 = weights
            .weights
            .iter()
            .filter(|(c, _)| **c != Column::ParameterList)
            .map(|(_, w)| w)
            .sum();
        let params = weights.weights.get(&Column::ParameterList).copied().unwrap_or(0.0);
        Ok(Self {
            s0: dense / total,
            s1: params / total,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FusedPrediction {
    /// MLP probability of the normal class.
    pub p1: f64,
    /// GCN probability of the normal class.
    pub p2: f64,
    #[serde(rename = "F")]
    pub f: f64,
    pub y_hat: u8,
}

impl FusedPrediction {
    /// Fuses two anomaly probabilities.
    pub fn from_anomaly_probs(mlp: f64, gcn: f64, weights: FusionWeights) -> Result<Self> {
        check_prob(mlp)?;
        check_prob(gcn)?;
        let (p1, p2) = (1.0 - mlp, 1.0 - gcn);
        let f = fuse(p1, p2, weights)?;
        Ok(Self {
            p1,
            p2,
            f,
            y_hat: decide(f),
        })
    }
}

fn check_prob(p: f64) -> Result<()> {
    if (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(Error::ProbabilityRange(p))
    }
}

/// `F = p1 s0 + p2 s1` for normal-class probabilities `p1`, `p2`.
pub fn fuse(p1: f64, p2: f64, weights: FusionWeights) -> Result<f64> {
    check_prob(p1)?;
    check_prob(p2)?;
    Ok((p1 * weights.s0 + p2 * weights.s1).clamp(0.0, 1.0))
}

/// 0 (normal) when `F > 0.5`, else 1 (anomaly).
pub fn decide(f: f64) -> u8 {
    if f > 0.5 {
        0
    } else {
        1
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub fpr: f64,
    /// Set when there were no positive predictions and precision was
    /// reported as zero by convention.
    pub precision_undefined: bool,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Confusion counts and derived rates, with 1 (anomaly) as the positive
/// class.
pub fn compute_metrics(predictions: &[u8], labels: &[u8]) -> Result<MetricReport> {
    if predictions.is_empty() {
        return Err(Error::EmptyInput("predictions"));
    }
    if predictions.len() != labels.len() {
        return Err(Error::Shape {
            expected: labels.len(),
            actual: predictions.len(),
        });
    }
    let mut r = MetricReport::default();
    for (&p, &y) in predictions.iter().zip(labels) {
        if p > 1 || y > 1 {
            return Err(Error::Schema(alloc::format!("labels must be 0 or 1, got {p} and {y}")));
        }
        match (p, y) {
            (1, 1) => r.tp += 1,
            (1, 0) => r.fp += 1,
            (0, 0) => r.tn += 1,
            _ => r.fn_ += 1,
        }
    }
    r.accuracy = ratio(r.tp + r.tn, predictions.len());
    r.precision = ratio(r.tp, r.tp + r.fp);
    r.precision_undefined = r.tp + r.fp == 0;
    r.recall = ratio(r.tp, r.tp + r.fn_);
    r.fpr = ratio(r.fp, r.fp + r.tn);
    r.f1 = if r.precision + r.recall > 0.0 {
        2.0 * r.precision * r.recall / (r.precision + r.recall)
    } else {
        0.0
    };
    Ok(r)
}

/// Fused decisions for paired anomaly probabilities.
pub fn fuse_all(mlp: &[f64], gcn: &[f64], weights: FusionWeights) -> Result<Vec<FusedPrediction>> {
    if mlp.len() != gcn.len() {
        return Err(Error::Shape {
            expected: mlp.len(),
            actual: gcn.len(),
        });
    }
    mlp.iter()
        .zip(gcn)
        .map(|(&a, &b)| FusedPrediction::from_anomaly_probs(a, b, weights))
        .collect()
}
