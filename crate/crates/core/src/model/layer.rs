use super::{Activation, ModelError, Result};
use crate::graph::{HopMask, HopMaskSet};
use crate::tensor::{Tape, Var};

/// Parameters of one layer registered on a tape.
#[derive(Clone, Copy, Debug)]
pub struct LayerVars {
    pub transform: Var,
    pub score: Var,
    pub key_transform: Var,
}

#[derive(Debug)]
pub struct LayerOutput {
    /// `Hᵏ` for each hop, `n × d_out`.
    pub per_hop: Vec<Var>,
    /// Normalized weight of every hop per node, `n × κ`.
    pub hop_attention: Var,
    pub output: Var,
}

/// Transformed node states plus the two halves of every pair score:
/// `rᵀ[z_i ⊕ z_j] = (z·r_src)_i + (z·r_dst)_j`.
struct Projection {
    z: Var,
    src: Var,
    dst: Var,
}

fn project(tape: &Tape, x: Var, params: &LayerVars) -> Result<Projection> {
    let z = tape.matmul(x, params.transform)?;
    let d_out = tape.shape(z).1;
    if tape.shape(params.score) != (2 * d_out, 1) {
        return Err(ModelError::Config(format!(
            "score vector {:?} does not match output width {d_out}",
            tape.shape(params.score)
        )));
    }
    let r_src = tape.slice_rows(params.score, 0, d_out)?;
    let r_dst = tape.slice_rows(params.score, d_out, d_out)?;
    Ok(Projection {
        src: tape.matmul(z, r_src)?,
        dst: tape.matmul(z, r_dst)?,
        z,
    })
}

fn aggregate(
    tape: &Tape,
    proj: &Projection,
    mask: &HopMask,
    leaky_slope: f64,
    activation: Activation,
) -> Result<Var> {
    let pattern = mask.pattern();
    let raw = tape.edge_scores(proj.src, proj.dst, pattern.clone())?;
    let scores = tape.leaky_relu(raw, leaky_slope);
    let alpha = tape.segment_softmax(scores, pattern.clone())?;
    let mixed = tape.spmm(alpha, pattern.clone(), proj.z)?;
    Ok(activation.apply(tape, mixed, leaky_slope))
}

/// Masked self-attention over one hop mask. Scores are only formed on mask
/// entries, normalized per row, and used to mix the transformed neighbors:
/// `h_i = g(Σ_j α_ij · z_j)`.
pub fn short_distance_attention(
    tape: &Tape,
    x: Var,
    mask: &HopMask,
    params: &LayerVars,
    leaky_slope: f64,
    activation: Activation,
) -> Result<Var> {
    let proj = project(tape, x, params)?;
    aggregate(tape, &proj, mask, leaky_slope, activation)
}

/// Attention across hops. Each node's hop embeddings are scored by a dot
/// product with its key `key_input_i · W_key`, softmax-normalized over hops,
/// and summed. Returns the mixed output and the `n × κ` hop weights.
pub fn long_distance_attention(
    tape: &Tape,
    per_hop: &[Var],
    key_input: Var,
    key_transform: Var,
) -> Result<(Var, Var)> {
    let first = *per_hop
        .first()
        .ok_or_else(|| ModelError::Config("no hop embeddings to combine".into()))?;
    let key = tape.matmul(key_input, key_transform)?;
    let mut raw = tape.row_dot(first, key)?;
    for &h in &per_hop[1..] {
        let c = tape.row_dot(h, key)?;
        raw = tape.hconcat(raw, c)?;
    }
    let weights = tape.softmax_rows(raw)?;
    let mut output = tape.scale_rows(first, tape.select_col(weights, 0)?)?;
    for (k, &h) in per_hop.iter().enumerate().skip(1) {
        let term = tape.scale_rows(h, tape.select_col(weights, k)?)?;
        output = tape.add(output, term)?;
    }
    Ok((output, weights))
}

/// One full layer: short-distance attention for every hop mask with a shared
/// transform and score vector, then attention across hops.
pub fn lsdan_layer(
    tape: &Tape,
    x: Var,
    key_input: Var,
    masks: &HopMaskSet,
    params: &LayerVars,
    leaky_slope: f64,
    activation: Activation,
) -> Result<LayerOutput> {
    let proj = project(tape, x, params)?;
    let per_hop = masks
        .masks()
        .iter()
        .map(|mask| aggregate(tape, &proj, mask, leaky_slope, activation))
        .collect::<Result<Vec<_>>>()?;
    let (output, hop_attention) =
        long_distance_attention(tape, &per_hop, key_input, params.key_transform)?;
    Ok(LayerOutput {
        per_hop,
        hop_attention,
        output,
    })
}
