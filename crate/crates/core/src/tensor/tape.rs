use std::cell::RefCell;
use std::sync::Arc;

use super::{BitMatrix, Pattern, Result, Tensor, TensorError};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(pub(super) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
pub(super) enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Scale(Var, f64),
    Hadamard(Var, Var),
    HConcat(Var, Var),
    RowDot(Var, Var),
    SliceRows { input: Var, start: usize },
    SelectCol { input: Var, col: usize },
    ScaleRows { input: Var, weights: Var },
    GatherRows { input: Var, index: Arc<[usize]> },
    LeakyRelu(Var, f64),
    Elu(Var, f64),
    Sigmoid(Var),
    Relu(Var),
    MaskedSoftmax(Var, Arc<BitMatrix>),
    SoftmaxRows(Var),
    EdgeScores { src: Var, dst: Var, pattern: Arc<Pattern> },
    SegmentSoftmax(Var, Arc<Pattern>),
    SpMM { weights: Var, pattern: Arc<Pattern>, dense: Var },
    LogisticLoss { input: Var, label: f64, eps: f64 },
    Sum(Var),
    Mean(Var),
}

#[derive(Debug)]
pub(super) struct Node {
    pub value: Arc<Tensor>,
    pub op: Op,
    pub requires_grad: bool,
}

/// Records operations in creation order. Node ids are assigned sequentially
/// and every operation only refers to earlier ids, so the recording order is
/// already a topological order and the graph cannot contain cycles.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

/// Gradients from one backward sweep, indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.borrow().is_empty()
    }

    pub(super) fn push(&self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.push_shared(Arc::new(value), op, requires_grad)
    }

    fn push_shared(&self, value: Arc<Tensor>, op: Op, requires_grad: bool) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(nodes.len() - 1)
    }

    /// Trainable leaf.
    pub fn param(&self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Constant leaf sharing storage with the caller, e.g. a feature matrix
    /// that is fed to the tape on every training step.
    pub fn constant_shared(&self, value: Arc<Tensor>) -> Var {
        self.push_shared(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> Arc<Tensor> {
        Arc::clone(&self.nodes.borrow()[v.0].value)
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes.borrow()[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes.borrow()[v.0].requires_grad
    }

    pub(super) fn rg(&self, vars: &[Var]) -> bool {
        let nodes = self.nodes.borrow();
        vars.iter().any(|v| nodes[v.0].requires_grad)
    }

    /// Reverse sweep from a 1x1 `loss`. Leaves flagged `requires_grad` that
    /// the loss does not depend on get an all-zero gradient.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let nodes = self.nodes.borrow();
        let shape = nodes[loss.0].value.shape();
        if shape != (1, 1) {
            return Err(TensorError::NonScalarLoss(shape));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; nodes.len()];
        grads[loss.0] = Some(Tensor::scalar(1.0));

        for id in (0..=loss.0).rev() {
            let node = &nodes[id];
            if !node.requires_grad {
                grads[id] = None;
                continue;
            }
            let Some(g) = grads[id].take() else {
                continue;
            };
            propagate(&nodes, node, &g, &mut grads);
            grads[id] = Some(g);
        }

        for (id, node) in nodes.iter().enumerate() {
            if matches!(node.op, Op::Leaf) && node.requires_grad && grads[id].is_none() {
                let (r, c) = node.value.shape();
                grads[id] = Some(Tensor::zeros(r, c));
            }
        }
        Ok(Gradients { grads })
    }
}

fn accumulate(nodes: &[Node], grads: &mut [Option<Tensor>], v: Var, delta: Tensor) {
    if !nodes[v.0].requires_grad {
        return;
    }
    match &mut grads[v.0] {
        Some(existing) => {
            for (a, b) in existing.data_mut().iter_mut().zip(delta.data()) {
                *a += b;
            }
        }
        slot @ None => *slot = Some(delta),
    }
}

fn wants(nodes: &[Node], v: Var) -> bool {
    nodes[v.0].requires_grad
}

fn zip_map(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::new(a.rows(), a.cols(), data).expect("shapes checked at record time")
}

fn softmax_row_backward(y: &[f64], g: &[f64], dx: &mut [f64]) {
    let dot: f64 = y.iter().zip(g).map(|(a, b)| a * b).sum();
    for ((d, &yi), &gi) in dx.iter_mut().zip(y).zip(g) {
        *d = yi * (gi - dot);
    }
}

fn propagate(nodes: &[Node], node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) {
    let val = |v: Var| -> &Tensor { &nodes[v.0].value };
    let out = &*node.value;
    match &node.op {
        Op::Leaf => {}
        Op::MatMul(a, b) => {
            let (av, bv) = (val(*a), val(*b));
            if wants(nodes, *a) {
                let da = g.matmul(&bv.transpose()).expect("shapes checked");
                accumulate(nodes, grads, *a, da);
            }
            if wants(nodes, *b) {
                // aᵀ·g with zero entries of `a` skipped
                let mut db = Tensor::zeros(bv.rows(), bv.cols());
                let s = bv.cols();
                for i in 0..av.rows() {
                    let g_row = g.row(i);
                    for (k, &x) in av.row(i).iter().enumerate() {
                        if x == 0.0 {
                            continue;
                        }
                        for (d, &gv) in db.row_mut(k)[..s].iter_mut().zip(g_row) {
                            *d += x * gv;
                        }
                    }
                }
                accumulate(nodes, grads, *b, db);
            }
        }
        Op::Add(a, b) => {
            accumulate(nodes, grads, *a, g.clone());
            accumulate(nodes, grads, *b, g.clone());
        }
        Op::Sub(a, b) => {
            accumulate(nodes, grads, *a, g.clone());
            accumulate(nodes, grads, *b, g.map(|x| -x));
        }
        Op::Scale(a, s) => accumulate(nodes, grads, *a, g.map(|x| x * s)),
        Op::Hadamard(a, b) => {
            if wants(nodes, *a) {
                accumulate(nodes, grads, *a, zip_map(g, val(*b), |x, y| x * y));
            }
            if wants(nodes, *b) {
                accumulate(nodes, grads, *b, zip_map(g, val(*a), |x, y| x * y));
            }
        }
        Op::HConcat(a, b) => {
            let (ca, cb) = (val(*a).cols(), val(*b).cols());
            let mut da = Tensor::zeros(g.rows(), ca);
            let mut db = Tensor::zeros(g.rows(), cb);
            for i in 0..g.rows() {
                da.row_mut(i).copy_from_slice(&g.row(i)[..ca]);
                db.row_mut(i).copy_from_slice(&g.row(i)[ca..]);
            }
            accumulate(nodes, grads, *a, da);
            accumulate(nodes, grads, *b, db);
        }
        Op::RowDot(a, b) => {
            let (av, bv) = (val(*a), val(*b));
            let scaled = |src: &Tensor| {
                let mut d = src.clone();
                for i in 0..d.rows() {
                    let gi = g.get(i, 0);
                    d.row_mut(i).iter_mut().for_each(|x| *x *= gi);
                }
                d
            };
            if wants(nodes, *a) {
                accumulate(nodes, grads, *a, scaled(bv));
            }
            if wants(nodes, *b) {
                accumulate(nodes, grads, *b, scaled(av));
            }
        }
        Op::SliceRows { input, start } => {
            let iv = val(*input);
            let mut d = Tensor::zeros(iv.rows(), iv.cols());
            let c = iv.cols();
            d.data_mut()[start * c..start * c + g.len()].copy_from_slice(g.data());
            accumulate(nodes, grads, *input, d);
        }
        Op::SelectCol { input, col } => {
            let iv = val(*input);
            let mut d = Tensor::zeros(iv.rows(), iv.cols());
            for i in 0..iv.rows() {
                d.set(i, *col, g.get(i, 0));
            }
            accumulate(nodes, grads, *input, d);
        }
        Op::ScaleRows { input, weights } => {
            let (iv, wv) = (val(*input), val(*weights));
            if wants(nodes, *input) {
                let mut d = g.clone();
                for i in 0..d.rows() {
                    let w = wv.get(i, 0);
                    d.row_mut(i).iter_mut().for_each(|x| *x *= w);
                }
                accumulate(nodes, grads, *input, d);
            }
            if wants(nodes, *weights) {
                let d = (0..iv.rows())
                    .map(|i| iv.row(i).iter().zip(g.row(i)).map(|(a, b)| a * b).sum())
                    .collect();
                accumulate(nodes, grads, *weights, Tensor::column(d));
            }
        }
        Op::GatherRows { input, index } => {
            let iv = val(*input);
            let mut d = Tensor::zeros(iv.rows(), iv.cols());
            for (r, &src) in index.iter().enumerate() {
                for (x, &gv) in d.row_mut(src).iter_mut().zip(g.row(r)) {
                    *x += gv;
                }
            }
            accumulate(nodes, grads, *input, d);
        }
        Op::LeakyRelu(a, slope) => {
            let d = zip_map(g, val(*a), |gv, x| if x >= 0.0 { gv } else { gv * slope });
            accumulate(nodes, grads, *a, d);
        }
        Op::Elu(a, alpha) => {
            let d = zip_map(g, val(*a), |gv, x| {
                if x > 0.0 {
                    gv
                } else {
                    gv * alpha * x.exp()
                }
            });
            accumulate(nodes, grads, *a, d);
        }
        Op::Sigmoid(a) => {
            let d = zip_map(g, out, |gv, y| gv * y * (1.0 - y));
            accumulate(nodes, grads, *a, d);
        }
        Op::Relu(a) => {
            // the kink takes the gradient of the active branch
            let d = zip_map(g, val(*a), |gv, x| if x >= 0.0 { gv } else { 0.0 });
            accumulate(nodes, grads, *a, d);
        }
        Op::MaskedSoftmax(a, mask) => {
            let mut d = Tensor::zeros(out.rows(), out.cols());
            for i in 0..out.rows() {
                let cols: Vec<usize> = mask.row_indices(i).collect();
                let y: Vec<f64> = cols.iter().map(|&j| out.get(i, j)).collect();
                let gr: Vec<f64> = cols.iter().map(|&j| g.get(i, j)).collect();
                let mut dx = vec![0.0; cols.len()];
                softmax_row_backward(&y, &gr, &mut dx);
                for (&j, v) in cols.iter().zip(dx) {
                    d.set(i, j, v);
                }
            }
            accumulate(nodes, grads, *a, d);
        }
        Op::SoftmaxRows(a) => {
            let mut d = Tensor::zeros(out.rows(), out.cols());
            for i in 0..out.rows() {
                softmax_row_backward(out.row(i), g.row(i), d.row_mut(i));
            }
            accumulate(nodes, grads, *a, d);
        }
        Op::EdgeScores { src, dst, pattern } => {
            let mut ds = vec![0.0; pattern.rows()];
            let mut dd = vec![0.0; pattern.cols()];
            let gd = g.data();
            for (i, dsi) in ds.iter_mut().enumerate() {
                for e in pattern.row_range(i) {
                    *dsi += gd[e];
                    dd[pattern.col_idx()[e] as usize] += gd[e];
                }
            }
            accumulate(nodes, grads, *src, Tensor::column(ds));
            accumulate(nodes, grads, *dst, Tensor::column(dd));
        }
        Op::SegmentSoftmax(a, pattern) => {
            let mut d = vec![0.0; pattern.nnz()];
            for i in 0..pattern.rows() {
                let r = pattern.row_range(i);
                softmax_row_backward(&out.data()[r.clone()], &g.data()[r.clone()], &mut d[r]);
            }
            accumulate(nodes, grads, *a, Tensor::column(d));
        }
        Op::SpMM {
            weights,
            pattern,
            dense,
        } => {
            let (wv, zv) = (val(*weights), val(*dense));
            let want_w = wants(nodes, *weights);
            let want_z = wants(nodes, *dense);
            let mut dw = vec![0.0; if want_w { pattern.nnz() } else { 0 }];
            let mut dz = if want_z {
                Tensor::zeros(zv.rows(), zv.cols())
            } else {
                Tensor::zeros(0, 0)
            };
            for i in 0..pattern.rows() {
                let g_row = g.row(i);
                for e in pattern.row_range(i) {
                    let j = pattern.col_idx()[e] as usize;
                    if want_w {
                        dw[e] = g_row.iter().zip(zv.row(j)).map(|(a, b)| a * b).sum();
                    }
                    if want_z {
                        let w = wv.data()[e];
                        for (x, &gv) in dz.row_mut(j).iter_mut().zip(g_row) {
                            *x += w * gv;
                        }
                    }
                }
            }
            if want_w {
                accumulate(nodes, grads, *weights, Tensor::column(dw));
            }
            if want_z {
                accumulate(nodes, grads, *dense, dz);
            }
        }
        Op::LogisticLoss { input, label, eps } => {
            let d = zip_map(g, val(*input), |gv, p| {
                if p < *eps || p > 1.0 - eps {
                    0.0
                } else {
                    gv * (-label / p + (1.0 - label) / (1.0 - p))
                }
            });
            accumulate(nodes, grads, *input, d);
        }
        Op::Sum(a) => {
            let (r, c) = val(*a).shape();
            accumulate(nodes, grads, *a, Tensor::filled(r, c, g.data()[0]));
        }
        Op::Mean(a) => {
            let (r, c) = val(*a).shape();
            let n = (r * c) as f64;
            accumulate(nodes, grads, *a, Tensor::filled(r, c, g.data()[0] / n));
        }
    }
}
