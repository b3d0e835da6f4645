//! Shared test oracles: a dense, loop-only reference forward pass and a
//! central finite-difference gradient checker.

#![allow(dead_code)]

use lsdan::graph::{Adjacency, HopMaskSet};
use lsdan::model::{Activation, KeySource, Lsdan};
use lsdan::purisk::{self, ClassPrior};
use lsdan::tensor::{Tape, Tensor, Var};
use rand::Rng;

pub type Matrix = Vec<Vec<f64>>;

pub fn to_matrix(t: &Tensor) -> Matrix {
    (0..t.rows()).map(|i| t.row(i).to_vec()).collect()
}

fn matmul(a: &Matrix, b: &Matrix) -> Matrix {
    let inner = b.len();
    let cols = b[0].len();
    a.iter()
        .map(|row| {
            (0..cols)
                .map(|j| (0..inner).map(|t| row[t] * b[t][j]).sum())
                .collect()
        })
        .collect()
}

fn activate(act: Activation, v: f64, slope: f64) -> f64 {
    match act {
        Activation::Elu => {
            if v > 0.0 {
                v
            } else {
                v.exp() - 1.0
            }
        }
        Activation::LeakyRelu => {
            if v > 0.0 {
                v
            } else {
                slope * v
            }
        }
        Activation::Identity => v,
    }
}

pub struct Reference {
    pub logits: Vec<f64>,
    /// Per layer: `n × κ` hop weights.
    pub hop_attention: Vec<Matrix>,
    /// Per layer, per hop: `n × d` embeddings.
    pub per_hop: Vec<Vec<Matrix>>,
}

/// The network written out as nested loops over dense matrices: literal
/// concatenation `[z_i, z_j]` dotted with the score vector, a softmax over
/// each mask row, dot-product hop scores and the layer stacking rules.
pub fn reference_forward(model: &Lsdan, x: &Tensor, masks: &HopMaskSet) -> Reference {
    let cfg = model.config();
    let n = x.rows();
    let raw = to_matrix(x);
    let mut u = raw.clone();
    let last = model.layers().len() - 1;
    let mut hop_attention = Vec::new();
    let mut all_hops = Vec::new();
    for (l, p) in model.layers().iter().enumerate() {
        let act = if l == last {
            cfg.output_activation
        } else {
            cfg.hidden_activation
        };
        let w = to_matrix(&p.transform);
        let r: Vec<f64> = p.score.data().to_vec();
        let d = w[0].len();
        let z = matmul(&u, &w);
        let mut hops = Vec::new();
        for mask in masks.masks() {
            let dense = mask.dense();
            let mut h = vec![vec![0.0; d]; n];
            for i in 0..n {
                let mut scores = Vec::new();
                for j in 0..n {
                    if dense.get(i, j) {
                        let cat: Vec<f64> = z[i].iter().chain(&z[j]).copied().collect();
                        let s: f64 = cat.iter().zip(&r).map(|(a, b)| a * b).sum();
                        let s = if s > 0.0 { s } else { cfg.leaky_slope * s };
                        scores.push((j, s));
                    }
                }
                let top = scores.iter().map(|s| s.1).fold(f64::NEG_INFINITY, f64::max);
                let total: f64 = scores.iter().map(|s| (s.1 - top).exp()).sum();
                for (j, s) in scores {
                    let alpha = (s - top).exp() / total;
                    for t in 0..d {
                        h[i][t] += alpha * z[j][t];
                    }
                }
                for v in h[i].iter_mut() {
                    *v = activate(act, *v, cfg.leaky_slope);
                }
            }
            hops.push(h);
        }
        let key_input = match cfg.key_source {
            KeySource::LayerInput => &u,
            KeySource::RawFeatures => &raw,
        };
        let key = matmul(key_input, &to_matrix(&p.key_transform));
        let mut c = vec![vec![0.0; hops.len()]; n];
        let mut out = vec![vec![0.0; d]; n];
        for i in 0..n {
            let s: Vec<f64> = hops
                .iter()
                .map(|h| h[i].iter().zip(&key[i]).map(|(a, b)| a * b).sum())
                .collect();
            let top = s.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let total: f64 = s.iter().map(|v| (v - top).exp()).sum();
            for k in 0..hops.len() {
                c[i][k] = (s[k] - top).exp() / total;
                for t in 0..d {
                    out[i][t] += c[i][k] * hops[k][i][t];
                }
            }
        }
        u = if l == 0 || l == last {
            out
        } else {
            u.iter()
                .zip(&out)
                .map(|(a, b)| a.iter().zip(b).map(|(x, y)| x + y).collect())
                .collect()
        };
        hop_attention.push(c);
        all_hops.push(hops);
    }
    Reference {
        logits: u.iter().map(|row| row[0]).collect(),
        hop_attention,
        per_hop: all_hops,
    }
}

pub fn random_adjacency(n: usize, p: f64, rng: &mut impl Rng) -> Adjacency {
    let mut pairs = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if rng.gen_bool(p) {
                pairs.push((i, j));
            }
        }
    }
    Adjacency::build(&pairs, n).unwrap().0
}

pub fn random_tensor(rows: usize, cols: usize, scale: f64, rng: &mut impl Rng) -> Tensor {
    let data = (0..rows * cols)
        .map(|_| rng.gen_range(-scale..scale))
        .collect();
    Tensor::new(rows, cols, data).unwrap()
}

pub fn logits(model: &Lsdan, x: &Tensor, masks: &HopMaskSet) -> Vec<f64> {
    let tape = Tape::new();
    let vars = model.bind(&tape);
    let xv = tape.constant(x.clone());
    let pass = model.forward(&tape, &vars, xv, masks).unwrap();
    tape.value(pass.logits).data().to_vec()
}

/// nnPU objective of the model's sigmoid outputs.
pub fn nnpu_objective(
    tape: &Tape,
    model: &Lsdan,
    vars: &[lsdan::model::LayerVars],
    x: &Tensor,
    masks: &HopMaskSet,
    positives: &[usize],
    unlabeled: &[usize],
    prior: ClassPrior,
) -> Var {
    let xv = tape.constant(x.clone());
    let pass = model.forward(tape, vars, xv, masks).unwrap();
    let probs = tape.sigmoid(pass.logits);
    let terms = purisk::risk_terms(tape, probs, positives, unlabeled).unwrap();
    purisk::nnpu_risk(tape, &terms, prior).unwrap()
}

pub struct GradCheck {
    pub max_rel_err: f64,
    pub checked: usize,
}

/// Compares tape gradients of `loss` with central differences of step `h`
/// over every parameter entry. Relative error uses `max(|a|, |b|, floor)`.
pub fn gradient_check(
    model: &Lsdan,
    h: f64,
    floor: f64,
    loss: impl Fn(&Tape, &Lsdan, &[lsdan::model::LayerVars]) -> Var,
) -> GradCheck {
    let tape = Tape::new();
    let vars = model.bind(&tape);
    let l = loss(&tape, model, &vars);
    let grads = tape.backward(l).unwrap();
    let analytic: Vec<Tensor> = vars
        .iter()
        .flat_map(|v| [v.transform, v.score, v.key_transform])
        .map(|v| grads.get(v).unwrap().clone())
        .collect();
    let eval = |m: &Lsdan| {
        let tape = Tape::new();
        let vars = m.bind(&tape);
        let l = loss(&tape, m, &vars);
        tape.value(l).item().unwrap()
    };
    let mut max_rel_err: f64 = 0.0;
    let mut checked = 0;
    let count = analytic.len();
    for p in 0..count {
        for e in 0..analytic[p].len() {
            let mut plus = model.clone();
            plus.params_mut()[p].data_mut()[e] += h;
            let mut minus = model.clone();
            minus.params_mut()[p].data_mut()[e] -= h;
            let numeric = (eval(&plus) - eval(&minus)) / (2.0 * h);
            let a = analytic[p].data()[e];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(floor);
            max_rel_err = max_rel_err.max(rel);
            checked += 1;
        }
    }
    GradCheck {
        max_rel_err,
        checked,
    }
}
