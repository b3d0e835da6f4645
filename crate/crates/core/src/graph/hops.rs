use std::io::{Read, Write};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{Adjacency, GraphError};
use crate::tensor::{BitMatrix, Pattern};

/// How hop masks are derived from the adjacency.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WalkMode {
    /// Powers of the self-loop augmented adjacency. A length-k walk can idle
    /// on the self-loop, so hop k covers every node within k steps.
    #[default]
    Cumulative,
    /// Powers of the raw adjacency (walks of exactly k steps), with the
    /// diagonal set afterwards so that every row keeps at least one entry.
    Exact,
}

/// One boolean hop mask, held both densely and as a CSR pattern.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct HopMask {
    dense: Arc<BitMatrix>,
    pattern: Arc<Pattern>,
}

impl HopMask {
    pub fn new(dense: BitMatrix) -> Self {
        let pattern = Arc::new(dense.to_pattern());
        HopMask {
            dense: Arc::new(dense),
            pattern,
        }
    }

    pub fn dense(&self) -> &Arc<BitMatrix> {
        &self.dense
    }

    pub fn pattern(&self) -> &Arc<Pattern> {
        &self.pattern
    }

    pub fn nnz(&self) -> usize {
        self.pattern.nnz()
    }
}

/// Masks `B^1 … B^κ`. Immutable once built.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct HopMaskSet {
    /// Hop distance of each stored mask, ascending.
    hops: Vec<usize>,
    masks: Vec<HopMask>,
    mode: WalkMode,
}

/// `A · B` over the boolean semiring, with `A` given by its rows.
fn bool_product(left: &BitMatrix, right: &BitMatrix) -> BitMatrix {
    let mut out = BitMatrix::new(left.rows(), right.cols());
    for i in 0..left.rows() {
        for l in left.row_indices(i) {
            out.or_row_from(i, right, l);
        }
    }
    out
}

impl HopMaskSet {
    /// Cumulative masks: self-loops are added to `adj`, then `B^k` marks every
    /// pair joined by a length-k walk of the augmented graph.
    pub fn compute(adj: &Adjacency, kappa: usize) -> Result<Self, GraphError> {
        Self::compute_with(adj, kappa, WalkMode::Cumulative)
    }

    pub fn compute_with(adj: &Adjacency, kappa: usize, mode: WalkMode) -> Result<Self, GraphError> {
        if kappa == 0 {
            return Err(GraphError::ZeroKappa);
        }
        let base = match mode {
            WalkMode::Cumulative => adj.with_self_loops(),
            WalkMode::Exact => adj.dense().clone(),
        };
        let mut powers = Vec::with_capacity(kappa);
        powers.push(base.clone());
        for _ in 1..kappa {
            let next = bool_product(&base, powers.last().expect("non-empty"));
            powers.push(next);
        }
        let masks = powers
            .into_iter()
            .map(|mut m| {
                if mode == WalkMode::Exact {
                    for i in 0..m.rows() {
                        m.set(i, i, true);
                    }
                }
                HopMask::new(m)
            })
            .collect();
        Ok(HopMaskSet {
            hops: (1..=kappa).collect(),
            masks,
            mode,
        })
    }

    /// Builds a set from precomputed masks; `hops[i]` labels `masks[i]`.
    pub fn from_masks(hops: Vec<usize>, masks: Vec<HopMask>, mode: WalkMode) -> Self {
        assert_eq!(hops.len(), masks.len());
        HopMaskSet { hops, masks, mode }
    }

    pub fn kappa(&self) -> usize {
        self.masks.len()
    }

    pub fn hops(&self) -> &[usize] {
        &self.hops
    }

    pub fn mode(&self) -> WalkMode {
        self.mode
    }

    pub fn with_self_loops(&self) -> bool {
        self.mode == WalkMode::Cumulative
    }

    pub fn masks(&self) -> &[HopMask] {
        &self.masks
    }

    pub fn n(&self) -> usize {
        self.masks.first().map_or(0, |m| m.dense.rows())
    }

    /// Mask for hop distance `k` (1-based).
    pub fn hop(&self, k: usize) -> Result<&HopMask, GraphError> {
        self.hops
            .iter()
            .position(|&h| h == k)
            .map(|i| &self.masks[i])
            .ok_or(GraphError::MissingHop(k))
    }

    /// A one-mask set holding only hop `k`.
    pub fn single(&self, k: usize) -> Result<HopMaskSet, GraphError> {
        Ok(HopMaskSet {
            hops: vec![k],
            masks: vec![self.hop(k)?.clone()],
            mode: self.mode,
        })
    }

    /// The first `kappa` hops.
    pub fn truncated(&self, kappa: usize) -> Result<HopMaskSet, GraphError> {
        if kappa == 0 {
            return Err(GraphError::ZeroKappa);
        }
        if kappa > self.masks.len() {
            return Err(GraphError::MissingHop(kappa));
        }
        Ok(HopMaskSet {
            hops: self.hops[..kappa].to_vec(),
            masks: self.masks[..kappa].to_vec(),
            mode: self.mode,
        })
    }

    pub fn nnz_per_hop(&self) -> Vec<usize> {
        self.masks.iter().map(HopMask::nnz).collect()
    }

    /// Relabels node `i` as `perm[i]` in every mask.
    pub fn permuted(&self, perm: &[usize]) -> HopMaskSet {
        let masks = self
            .masks
            .iter()
            .map(|m| {
                let n = m.dense.rows();
                let mut out = BitMatrix::new(n, n);
                for i in 0..n {
                    for j in m.dense.row_indices(i) {
                        out.set(perm[i], perm[j], true);
                    }
                }
                HopMask::new(out)
            })
            .collect();
        HopMaskSet {
            hops: self.hops.clone(),
            masks,
            mode: self.mode,
        }
    }

    const MAGIC: &'static [u8; 8] = b"LSDANMSK";
    const VERSION: u32 = 1;

    /// Binary cache layout, little endian: magic, version `u32`, mode `u8`,
    /// `n` and mask count as `u64`; per mask its hop `u64`, `nnz` `u64`,
    /// `n + 1` row offsets `u64` and `nnz` column indices `u32`.
    pub fn write_to(&self, mut w: impl Write) -> std::io::Result<()> {
        w.write_all(Self::MAGIC)?;
        w.write_all(&Self::VERSION.to_le_bytes())?;
        w.write_all(&[match self.mode {
            WalkMode::Cumulative => 0u8,
            WalkMode::Exact => 1u8,
        }])?;
        w.write_all(&(self.n() as u64).to_le_bytes())?;
        w.write_all(&(self.masks.len() as u64).to_le_bytes())?;
        let mut buf = Vec::new();
        for (hop, mask) in self.hops.iter().zip(&self.masks) {
            buf.clear();
            let p = &mask.pattern;
            buf.extend_from_slice(&(*hop as u64).to_le_bytes());
            buf.extend_from_slice(&(p.nnz() as u64).to_le_bytes());
            for &r in p.row_ptr() {
                buf.extend_from_slice(&(r as u64).to_le_bytes());
            }
            for &c in p.col_idx() {
                buf.extend_from_slice(&c.to_le_bytes());
            }
            w.write_all(&buf)?;
        }
        w.flush()
    }

    pub fn read_from(mut r: impl Read) -> Result<Self, GraphError> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)
            .map_err(|e| GraphError::Cache(e.to_string()))?;
        let mut cur = Cursor { bytes: &bytes, pos: 0 };
        if cur.take(8)? != Self::MAGIC {
            return Err(GraphError::Cache("not a hop-mask cache file".into()));
        }
        let version = cur.u32()?;
        if version != Self::VERSION {
            return Err(GraphError::Cache(format!("unsupported cache version {version}")));
        }
        let mode = match cur.take(1)?[0] {
            0 => WalkMode::Cumulative,
            1 => WalkMode::Exact,
            other => return Err(GraphError::Cache(format!("unknown walk mode {other}"))),
        };
        let n = cur.u64()? as usize;
        let count = cur.u64()? as usize;
        let mut hops = Vec::with_capacity(count);
        let mut masks = Vec::with_capacity(count);
        for _ in 0..count {
            hops.push(cur.u64()? as usize);
            let nnz = cur.u64()? as usize;
            let row_ptr = (0..=n).map(|_| cur.u64().map(|v| v as usize)).collect::<Result<Vec<_>, _>>()?;
            let col_idx = (0..nnz).map(|_| cur.u32()).collect::<Result<Vec<_>, _>>()?;
            let pattern = Pattern::from_parts(n, n, row_ptr, col_idx)
                .map_err(|e| GraphError::Cache(e.to_string()))?;
            masks.push(HopMask {
                dense: Arc::new(pattern.to_bit_matrix()),
                pattern: Arc::new(pattern),
            });
        }
        if cur.pos != bytes.len() {
            return Err(GraphError::Cache("trailing bytes in cache file".into()));
        }
        Ok(HopMaskSet { hops, masks, mode })
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, len: usize) -> Result<&'a [u8], GraphError> {
        let end = self.pos + len;
        let slice = self
            .bytes
            .get(self.pos..end)
            .ok_or_else(|| GraphError::Cache("truncated cache file".into()))?;
        self.pos = end;
        Ok(slice)
    }

    fn u32(&mut self) -> Result<u32, GraphError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64, GraphError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}
