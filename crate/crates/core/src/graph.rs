use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::embed::TokenEmbedder;
use crate::error::{Error, Result};
use crate::math;

/// Per-event graph: the event id as root, one leaf per surviving parameter
/// occurrence. Node features are stored row-major, `dim` values per node.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EventGraph {
    pub labels: Vec<String>,
    pub edges: Vec<(usize, usize)>,
    pub features: Vec<f64>,
    pub dim: usize,
}

impl EventGraph {
    /// Star graph rooted at `root` with one leaf per parameter.
    pub fn star<S: AsRef<str>>(root: &str, leaves: &[S], embedder: &TokenEmbedder) -> Self {
        let dim = embedder.dim();
        let mut labels = Vec::with_capacity(leaves.len() + 1);
        let mut features = Vec::with_capacity((leaves.len() + 1) * dim);
        labels.push(root.to_string());
        features.extend(embedder.embed(root));
        for leaf in leaves {
            labels.push(leaf.as_ref().to_string());
            features.extend(embedder.embed(leaf.as_ref()));
        }
        let edges = (1..labels.len()).map(|i| (0, i)).collect();
        Self {
            labels,
            edges,
            features,
            dim,
        }
    }

    pub fn node_count(&self) -> usize {
        self.labels.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn node_features(&self, node: usize) -> &[f64] {
        &self.features[node * self.dim..(node + 1) * self.dim]
    }

    /// True when some node touches every edge and the edges are exactly the
    /// root-to-leaf pairs.
    pub fn is_star(&self) -> bool {
        let n = self.node_count();
        if n == 0 || self.edges.len() != n - 1 {
            return false;
        }
        if n == 1 {
            return true;
        }
        (0..n).any(|root| {
            let mut seen = vec![false; n];
            seen[root] = true;
            self.edges.iter().all(|&(a, b)| {
                let leaf = if a == root { b } else if b == root { a } else { return false };
                !core::mem::replace(&mut seen[leaf], true)
            })
        })
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.node_count();
        if n == 0 {
            return Err(Error::EmptyGraph);
        }
        if self.features.len() != n * self.dim {
            return Err(Error::Shape {
                expected: n * self.dim,
                actual: self.features.len(),
            });
        }
        if let Some(&(a, b)) = self.edges.iter().find(|&&(a, b)| a >= n || b >= n) {
            return Err(Error::Schema(alloc::format!("edge ({a}, {b}) outside {n} nodes")));
        }
        Ok(())
    }

    /// Symmetric-normalized adjacency with self loops,
    /// `D^-1/2 (A + I) D^-1/2`, as a dense row-major `n x n` matrix.
    pub fn normalized_adjacency(&self) -> Vec<f64> {
        let n = self.node_count();
        let mut a = vec![0.0; n * n];
        for i in 0..n {
            a[i * n + i] = 1.0;
        }
        for &(u, v) in &self.edges {
            if u != v {
                a[u * n + v] = 1.0;
                a[v * n + u] = 1.0;
            }
        }
        let inv_sqrt_deg: Vec<f64> = (0..n)
            .map(|i| 1.0 / math::sqrt(a[i * n..(i + 1) * n].iter().sum()))
            .collect();
        for i in 0..n {
            for j in 0..n {
                a[i * n + j] *= inv_sqrt_deg[i] * inv_sqrt_deg[j];
            }
        }
        a
    }

    /// Relabels nodes: node `i` moves to position `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let n = self.node_count();
        assert_eq!(perm.len(), n, "permutation length");
        let mut labels = vec![String::new(); n];
        let mut features = vec![0.0; n * self.dim];
        for (i, &p) in perm.iter().enumerate() {
            labels[p] = self.labels[i].clone();
            features[p * self.dim..(p + 1) * self.dim].copy_from_slice(self.node_features(i));
        }
        let edges = self.edges.iter().map(|&(a, b)| (perm[a], perm[b])).collect();
        Self {
            labels,
            edges,
            features,
            dim: self.dim,
        }
    }
}
