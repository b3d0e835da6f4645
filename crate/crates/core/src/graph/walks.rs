use super::GraphError;
use crate::tensor::BitMatrix;

pub const BRUTE_FORCE_MAX_NODES: usize = 64;

/// Marks `(i, j)` whenever some walk of exactly `k` steps leads from `i` to
/// `j` in `adj`, found by depth-first enumeration of every such walk.
///
/// This is a reference for [`super::HopMaskSet`] on small graphs; it takes
/// the adjacency exactly as given, so pass a self-loop augmented matrix to
/// compare against cumulative masks.
pub fn brute_force_walk_mask(adj: &BitMatrix, k: usize) -> Result<BitMatrix, GraphError> {
    let n = adj.rows();
    if n > BRUTE_FORCE_MAX_NODES {
        return Err(GraphError::TooLargeForOracle {
            n,
            max: BRUTE_FORCE_MAX_NODES,
        });
    }
    let neighbors: Vec<Vec<usize>> = (0..n)
        .map(|i| (0..n).filter(|&j| adj.get(i, j)).collect())
        .collect();
    let mut out = BitMatrix::new(n, n);
    for start in 0..n {
        let mut stack = vec![(start, 0usize)];
        while let Some((node, depth)) = stack.pop() {
            if depth == k {
                out.set(start, node, true);
                continue;
            }
            for &next in &neighbors[node] {
                stack.push((next, depth + 1));
            }
        }
    }
    Ok(out)
}
