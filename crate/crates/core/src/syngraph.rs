//! Tree distances over the undirected dependency graph and the per-head
//! distance-threshold attention masks built from them.

use std::collections::VecDeque;

use crate::error::{Error, Result};
use crate::tensor::{Tensor, MASK_SENTINEL};

/// All-pairs shortest-path lengths, in edges.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DistanceMatrix {
    n: usize,
    data: Vec<usize>,
}

impl DistanceMatrix {
    pub fn size(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> usize {
        self.data[i * self.n + j]
    }

    pub fn row(&self, i: usize) -> &[usize] {
        &self.data[i * self.n..(i + 1) * self.n]
    }
}

fn adjacency(heads: &[Option<usize>]) -> Result<Vec<Vec<usize>>> {
    let n = heads.len();
    let mut adj = vec![Vec::new(); n];
    for (i, h) in heads.iter().enumerate() {
        if let Some(h) = *h {
            if h >= n {
                return Err(Error::Contract(format!("head {h} out of range")));
            }
            adj[i].push(h);
            adj[h].push(i);
        }
    }
    Ok(adj)
}

/// BFS from every node over head arcs taken as undirected edges.
pub fn tree_distances(heads: &[Option<usize>]) -> Result<DistanceMatrix> {
    let n = heads.len();
    let adj = adjacency(heads)?;
    let mut data = vec![usize::MAX; n * n];
    let mut queue = VecDeque::with_capacity(n);
    for src in 0..n {
        let row = &mut data[src * n..(src + 1) * n];
        row[src] = 0;
        queue.push_back(src);
        while let Some(u) = queue.pop_front() {
            for &v in &adj[u] {
                if row[v] == usize::MAX {
                    row[v] = row[u] + 1;
                    queue.push_back(v);
                }
            }
        }
        if row.contains(&usize::MAX) {
            return Err(Error::Contract(format!(
                "dependency graph is disconnected (node {src} cannot reach every token)"
            )));
        }
    }
    Ok(DistanceMatrix { n, data })
}

/// Per-head additive masks: entry `(i, j)` is 0 when `D(i, j) <= τ`, else the sentinel.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskSet {
    pub thresholds: Vec<usize>,
    pub masks: Vec<Tensor>,
}

impl MaskSet {
    pub fn heads(&self) -> usize {
        self.masks.len()
    }

    /// `p` all-zero masks (no syntactic restriction).
    pub fn unrestricted(n: usize, p: usize) -> Self {
        Self {
            thresholds: vec![usize::MAX; p],
            masks: vec![Tensor::zeros(n, n); p],
        }
    }
}

/// Thresholds `1..=p`.
pub fn default_thresholds(p: usize) -> Vec<usize> {
    (1..=p).collect()
}

pub fn build_masks(d: &DistanceMatrix, p: usize, thresholds: Option<&[usize]>) -> Result<MaskSet> {
    if p == 0 {
        return Err(Error::Contract("head count must be at least 1".into()));
    }
    let thresholds = match thresholds {
        Some(t) => t.to_vec(),
        None => default_thresholds(p),
    };
    if thresholds.len() != p {
        return Err(Error::Contract(format!(
            "{} thresholds given for {p} heads",
            thresholds.len()
        )));
    }
    if thresholds.contains(&0) {
        return Err(Error::Contract("thresholds must be positive".into()));
    }
    if thresholds.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::Contract("thresholds must be non-decreasing".into()));
    }
    let n = d.size();
    let masks = thresholds
        .iter()
        .map(|&tau| {
            Tensor::from_fn(n, n, |i, j| {
                if d.get(i, j) <= tau {
                    0.0
                } else {
                    MASK_SENTINEL
                }
            })
        })
        .collect();
    Ok(MaskSet { thresholds, masks })
}
