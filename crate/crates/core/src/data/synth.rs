//! Synthetic two-community graphs with known labels, for tests and smoke runs.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Cites, Content, GraphDataset, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TwoClusterConfig {
    /// Nodes per community.
    pub cluster_size: usize,
    pub num_features: usize,
    /// Edge probability inside a community.
    pub p_in: f64,
    /// Edge probability across communities.
    pub p_out: f64,
    /// Half-width of the uniform noise added to every feature.
    pub noise: f64,
}

impl Default for TwoClusterConfig {
    fn default() -> Self {
        TwoClusterConfig {
            cluster_size: 60,
            num_features: 16,
            p_in: 0.15,
            p_out: 0.01,
            noise: 0.5,
        }
    }
}

/// Community `c ∈ {0, 1}` has the `c`-th half of its features set to 1
/// before noise; community 1 is the positive class. Node ids are `n0, n1, …`,
/// first community first.
pub fn two_clusters(cfg: &TwoClusterConfig, seed: u64) -> Result<GraphDataset> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = 2 * cfg.cluster_size;
    let m = cfg.num_features.max(2);
    let community = |i: usize| usize::from(i >= cfg.cluster_size);
    let mut features = Tensor::zeros(n, m);
    for i in 0..n {
        for j in 0..m {
            let base = if j * 2 / m == community(i) { 1.0 } else { 0.0 };
            features.set(i, j, base + rng.gen_range(-cfg.noise..=cfg.noise));
        }
    }
    let mut edges = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            let p = if community(i) == community(j) { cfg.p_in } else { cfg.p_out };
            if rng.gen_bool(p) {
                edges.push((i, j));
            }
        }
    }
    let content = Content {
        node_ids: (0..n).map(|i| format!("n{i}")).collect(),
        features,
        labels: (0..n).map(|i| if community(i) == 1 { "pos" } else { "neg" }.to_string()).collect(),
    };
    let cites = Cites {
        lines: edges.len(),
        unknown: 0,
        edges,
    };
    GraphDataset::from_parts("two-clusters", content, cites, "pos", false, format!("synthetic-{seed}"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_and_labels() {
        let ds = two_clusters(&TwoClusterConfig::default(), 1).unwrap();
        assert_eq!(ds.n(), 120);
        assert_eq!(ds.num_positives(), 60);
        assert_eq!(ds.binary_labels[0], 0);
        assert_eq!(ds.binary_labels[119], 1);
        let a = two_clusters(&TwoClusterConfig::default(), 1).unwrap();
        assert_eq!(a.features, ds.features);
        assert_eq!(a.adjacency.edges(), ds.adjacency.edges());
    }
}
