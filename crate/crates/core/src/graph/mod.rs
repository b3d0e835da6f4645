//! Undirected adjacency structure and k-hop reachability masks.

mod hops;
mod walks;

use thiserror::Error;

use crate::tensor::BitMatrix;

pub use hops::{HopMask, HopMaskSet, WalkMode};
pub use walks::{brute_force_walk_mask, BRUTE_FORCE_MAX_NODES};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum GraphError {
    #[error("edge #{position} ({a}, {b}) references a node outside 0..{n}")]
    NodeOutOfRange {
        position: usize,
        a: usize,
        b: usize,
        n: usize,
    },
    #[error("kappa must be at least 1")]
    ZeroKappa,
    #[error("hop {0} is not available in this mask set")]
    MissingHop(usize),
    #[error("walk enumeration is limited to {max} nodes, graph has {n}")]
    TooLargeForOracle { n: usize, max: usize },
    #[error("{0}")]
    Cache(String),
}

/// What `build_adjacency` dropped or merged while symmetrizing.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct BuildReport {
    pub input_pairs: usize,
    pub self_loops_dropped: usize,
    pub duplicates_merged: usize,
}

/// Symmetric 0/1 adjacency with an empty diagonal.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Adjacency {
    n: usize,
    /// Undirected edges as `(i, j)` with `i < j`, sorted.
    edges: Vec<(usize, usize)>,
    dense: BitMatrix,
}

impl Adjacency {
    /// Symmetric closure of `pairs` over nodes `0..n`. Self-edges are
    /// dropped and repeated pairs (in either direction) merged.
    pub fn build(pairs: &[(usize, usize)], n: usize) -> Result<(Self, BuildReport), GraphError> {
        let mut report = BuildReport {
            input_pairs: pairs.len(),
            ..Default::default()
        };
        let mut dense = BitMatrix::new(n, n);
        let mut edges = Vec::with_capacity(pairs.len());
        for (position, &(a, b)) in pairs.iter().enumerate() {
            if a >= n || b >= n {
                return Err(GraphError::NodeOutOfRange { position, a, b, n });
            }
            if a == b {
                report.self_loops_dropped += 1;
                continue;
            }
            if dense.get(a, b) {
                report.duplicates_merged += 1;
                continue;
            }
            dense.set(a, b, true);
            dense.set(b, a, true);
            edges.push((a.min(b), a.max(b)));
        }
        edges.sort_unstable();
        Ok((Adjacency { n, edges, dense }, report))
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn dense(&self) -> &BitMatrix {
        &self.dense
    }

    pub fn contains(&self, i: usize, j: usize) -> bool {
        self.dense.get(i, j)
    }

    pub fn degree(&self, i: usize) -> usize {
        self.dense.row_count(i)
    }

    pub fn neighbors(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        self.dense.row_indices(i)
    }

    /// The adjacency with every diagonal entry set.
    pub fn with_self_loops(&self) -> BitMatrix {
        let mut m = self.dense.clone();
        for i in 0..self.n {
            m.set(i, i, true);
        }
        m
    }

    /// Relabels node `i` as `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Adjacency {
        let pairs: Vec<_> = self.edges.iter().map(|&(a, b)| (perm[a], perm[b])).collect();
        Adjacency::build(&pairs, self.n).expect("permutation stays in range").0
    }
}
