//! Random forest with entropy splits, used for column importance.
//!
//! Importance is the mean decrease in impurity: every split credits its
//! feature with the sample-weighted drop in entropy, each tree's credits are
//! normalized to sum one, and the trees are averaged.

use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ForestConfig {
    pub n_trees: usize,
    pub max_depth: usize,
    pub min_samples_split: usize,
    /// Features examined per split; `None` means `floor(sqrt(n_features))`.
    pub max_features: Option<usize>,
    pub bootstrap: bool,
    pub seed: u64,
}

impl Default for ForestConfig {
    fn default() -> Self {
        Self {
            n_trees: 100,
            max_depth: 12,
            min_samples_split: 2,
            max_features: None,
            bootstrap: true,
            seed: 7,
        }
    }
}

/// Binary entropy in bits of a class split.
pub fn entropy(neg: usize, pos: usize) -> f64 {
    let n = (neg + pos) as f64;
    if neg == 0 || pos == 0 {
        return 0.0;
    }
    let p = pos as f64 / n;
    let q = neg as f64 / n;
    -(p * math::log2(p) + q * math::log2(q))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
enum TreeNode {
    Leaf {
        p_positive: f64,
    },
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecisionTree {
    nodes: Vec<TreeNode>,
}

impl DecisionTree {
    pub fn predict_proba(&self, row: &[f64]) -> f64 {
        let mut at = 0;
        loop {
            match &self.nodes[at] {
                TreeNode::Leaf { p_positive } => return *p_positive,
                TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => at = if row[*feature] <= *threshold { *left } else { *right },
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RandomForest {
    trees: Vec<DecisionTree>,
    n_features: usize,
}

/// A fitted forest and its normalized feature importances.
#[derive(Clone, Debug)]
pub struct FittedForest {
    pub forest: RandomForest,
    pub importances: Vec<f64>,
}

impl RandomForest {
    /// Fits on `rows` (all the same width) with binary `labels`.
    pub fn fit(rows: &[Vec<f64>], labels: &[u8], config: &ForestConfig) -> Result<FittedForest> {
        if rows.is_empty() {
            return Err(Error::EmptyInput("forest training rows"));
        }
        if rows.len() != labels.len() {
            return Err(Error::Shape {
                expected: rows.len(),
                actual: labels.len(),
            });
        }
        let n_features = rows[0].len();
        if let Some(bad) = rows.iter().find(|r| r.len() != n_features) {
            return Err(Error::Shape {
                expected: n_features,
                actual: bad.len(),
            });
        }
        if config.n_trees == 0 || config.max_depth == 0 {
            return Err(Error::Config("forest needs at least one tree of depth >= 1".into()));
        }
        let mtry = config
            .max_features
            .unwrap_or_else(|| (math::sqrt(n_features as f64) as usize).max(1))
            .clamp(1, n_features.max(1));

        let mut importances = vec![0.0; n_features];
        let mut trees = Vec::with_capacity(config.n_trees);
        for t in 0..config.n_trees {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(t as u64));
            let sample: Vec<usize> = if config.bootstrap {
                (0..rows.len()).map(|_| rng.gen_range(0..rows.len())).collect()
            } else {
                (0..rows.len()).collect()
            };
            let mut builder = TreeBuilder {
                rows,
                labels,
                config,
                mtry,
                total: sample.len() as f64,
                nodes: Vec::new(),
                credit: vec![0.0; n_features],
                rng,
            };
            builder.grow(sample, 0);
            let sum: f64 = builder.credit.iter().sum();
            if sum > 0.0 {
                for (acc, c) in importances.iter_mut().zip(&builder.credit) {
                    *acc += c / sum;
                }
            }
            trees.push(DecisionTree { nodes: builder.nodes });
        }

        let total: f64 = importances.iter().sum();
        if total <= 0.0 {
            return Err(Error::ImportanceUndefined("no split reduces entropy".into()));
        }
        for v in &mut importances {
            *v /= total;
        }
        Ok(FittedForest {
            forest: RandomForest { trees, n_features },
            importances,
        })
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    /// Mean positive-class probability over trees.
    pub fn predict_proba(&self, row: &[f64]) -> f64 {
        self.trees.iter().map(|t| t.predict_proba(row)).sum::<f64>() / self.trees.len() as f64
    }
}

struct TreeBuilder<'a> {
    rows: &'a [Vec<f64>],
    labels: &'a [u8],
    config: &'a ForestConfig,
    mtry: usize,
    total: f64,
    nodes: Vec<TreeNode>,
    credit: Vec<f64>,
    rng: ChaCha8Rng,
}

struct SplitChoice {
    feature: usize,
    threshold: f64,
    gain: f64,
}

impl TreeBuilder<'_> {
    fn grow(&mut self, sample: Vec<usize>, depth: usize) -> usize {
        let pos = sample.iter().filter(|&&i| self.labels[i] == 1).count();
        let neg = sample.len() - pos;
        let id = self.nodes.len();
        self.nodes.push(TreeNode::Leaf {
            p_positive: pos as f64 / sample.len().max(1) as f64,
        });
        if depth >= self.config.max_depth || sample.len() < self.config.min_samples_split || pos == 0 || neg == 0 {
            return id;
        }
        let Some(split) = self.best_split(&sample, neg, pos) else {
            return id;
        };
        // weighted impurity decrease, relative to the whole bootstrap sample
        self.credit[split.feature] += sample.len() as f64 / self.total * split.gain;
        let (left, right): (Vec<usize>, Vec<usize>) = sample
            .into_iter()
            .partition(|&i| self.rows[i][split.feature] <= split.threshold);
        let l = self.grow(left, depth + 1);
        let r = self.grow(right, depth + 1);
        self.nodes[id] = TreeNode::Split {
            feature: split.feature,
            threshold: split.threshold,
            left: l,
            right: r,
        };
        id
    }

    /// Searches features in random order until `mtry` non-constant ones have
    /// been examined.
    fn best_split(&mut self, sample: &[usize], neg: usize, pos: usize) -> Option<SplitChoice> {
        let parent = entropy(neg, pos);
        let n = sample.len() as f64;
        let mut features: Vec<usize> = (0..self.credit.len()).collect();
        features.shuffle(&mut self.rng);

        let mut best: Option<SplitChoice> = None;
        let mut examined = 0;
        let mut sorted: Vec<(f64, u8)> = Vec::with_capacity(sample.len());
        for f in features {
            if examined >= self.mtry {
                break;
            }
            sorted.clear();
            sorted.extend(sample.iter().map(|&i| (self.rows[i][f], self.labels[i])));
            sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
            if sorted[0].0 == sorted[sorted.len() - 1].0 {
                continue;
            }
            examined += 1;

            let (mut l_neg, mut l_pos) = (0usize, 0usize);
            for k in 0..sorted.len() - 1 {
                if sorted[k].1 == 1 {
                    l_pos += 1;
                } else {
                    l_neg += 1;
                }
                if sorted[k].0 == sorted[k + 1].0 {
                    continue;
                }
                let nl = (k + 1) as f64;
                let (r_neg, r_pos) = (neg - l_neg, pos - l_pos);
                let child = nl / n * entropy(l_neg, l_pos) + (n - nl) / n * entropy(r_neg, r_pos);
                let gain = parent - child;
                if best.as_ref().is_none_or(|b| gain > b.gain) {
                    best = Some(SplitChoice {
                        feature: f,
                        threshold: 0.5 * (sorted[k].0 + sorted[k + 1].0),
                        gain,
                    });
                }
            }
        }
        best.filter(|b| b.gain > 1e-12)
    }
}
