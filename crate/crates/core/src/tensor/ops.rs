use std::sync::Arc;

use super::tape::Op;
use super::{BitMatrix, Pattern, Result, Shape, Tape, Tensor, TensorError, Var};

fn same_shape(op: &'static str, a: Shape, b: Shape) -> Result<()> {
    if a != b {
        return Err(TensorError::Shape {
            op,
            left: a,
            right: b,
        });
    }
    Ok(())
}

fn zip(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::new(a.rows(), a.cols(), data).expect("same shape")
}

#[inline]
pub(crate) fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Stabilized softmax of `scores` written into `out`; `scores` must be
/// non-empty.
fn softmax_into(scores: impl Iterator<Item = f64> + Clone, out: &mut [f64]) {
    let max = scores.clone().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for (o, s) in out.iter_mut().zip(scores) {
        *o = (s - max).exp();
        total += *o;
    }
    for o in out.iter_mut() {
        *o /= total;
    }
}

impl Tape {
    fn unary(&self, a: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let value = self.value(a).map(f);
        let rg = self.rg(&[a]);
        self.push(value, op, rg)
    }

    /// `a · b`.
    pub fn matmul(&self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(&self.value(b))?;
        Ok(self.push(value, Op::MatMul(a, b), self.rg(&[a, b])))
    }

    pub fn add(&self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        same_shape("add", av.shape(), bv.shape())?;
        Ok(self.push(zip(&av, &bv, |x, y| x + y), Op::Add(a, b), self.rg(&[a, b])))
    }

    pub fn sub(&self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        same_shape("sub", av.shape(), bv.shape())?;
        Ok(self.push(zip(&av, &bv, |x, y| x - y), Op::Sub(a, b), self.rg(&[a, b])))
    }

    pub fn scale(&self, a: Var, s: f64) -> Var {
        self.unary(a, Op::Scale(a, s), |x| x * s)
    }

    pub fn hadamard(&self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        same_shape("hadamard", av.shape(), bv.shape())?;
        Ok(self.push(
            zip(&av, &bv, |x, y| x * y),
            Op::Hadamard(a, b),
            self.rg(&[a, b]),
        ))
    }

    /// Row-wise concatenation: output row `i` is `a_i ⊕ b_i`.
    pub fn hconcat(&self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.rows() != bv.rows() {
            return Err(TensorError::Shape {
                op: "hconcat",
                left: av.shape(),
                right: bv.shape(),
            });
        }
        let cols = av.cols() + bv.cols();
        let mut data = Vec::with_capacity(av.rows() * cols);
        for i in 0..av.rows() {
            data.extend_from_slice(av.row(i));
            data.extend_from_slice(bv.row(i));
        }
        let value = Tensor::new(av.rows(), cols, data)?;
        Ok(self.push(value, Op::HConcat(a, b), self.rg(&[a, b])))
    }

    /// Per-row dot product of two `n×d` tensors, giving `n×1`.
    pub fn row_dot(&self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        same_shape("row_dot", av.shape(), bv.shape())?;
        let data = (0..av.rows())
            .map(|i| av.row(i).iter().zip(bv.row(i)).map(|(x, y)| x * y).sum())
            .collect();
        Ok(self.push(Tensor::column(data), Op::RowDot(a, b), self.rg(&[a, b])))
    }

    pub fn slice_rows(&self, a: Var, start: usize, len: usize) -> Result<Var> {
        let av = self.value(a);
        if start + len > av.rows() {
            return Err(TensorError::Invalid(format!(
                "rows {start}..{} out of range for {:?}",
                start + len,
                av.shape()
            )));
        }
        let c = av.cols();
        let value = Tensor::new(len, c, av.data()[start * c..(start + len) * c].to_vec())?;
        Ok(self.push(value, Op::SliceRows { input: a, start }, self.rg(&[a])))
    }

    pub fn select_col(&self, a: Var, col: usize) -> Result<Var> {
        let av = self.value(a);
        if col >= av.cols() {
            return Err(TensorError::Invalid(format!(
                "column {col} out of range for {:?}",
                av.shape()
            )));
        }
        let data = (0..av.rows()).map(|i| av.get(i, col)).collect();
        Ok(self.push(
            Tensor::column(data),
            Op::SelectCol { input: a, col },
            self.rg(&[a]),
        ))
    }

    /// Multiplies row `i` of `a` by `weights[i]` (`weights` is `n×1`).
    pub fn scale_rows(&self, a: Var, weights: Var) -> Result<Var> {
        let (av, wv) = (self.value(a), self.value(weights));
        same_shape("scale_rows", (av.rows(), 1), wv.shape())?;
        let mut value = (*av).clone();
        for i in 0..value.rows() {
            let w = wv.get(i, 0);
            value.row_mut(i).iter_mut().for_each(|x| *x *= w);
        }
        Ok(self.push(
            value,
            Op::ScaleRows { input: a, weights },
            self.rg(&[a, weights]),
        ))
    }

    pub fn gather_rows(&self, a: Var, index: &[usize]) -> Result<Var> {
        let av = self.value(a);
        if let Some(&bad) = index.iter().find(|&&i| i >= av.rows()) {
            return Err(TensorError::Invalid(format!(
                "row {bad} out of range for {:?}",
                av.shape()
            )));
        }
        let mut data = Vec::with_capacity(index.len() * av.cols());
        for &i in index {
            data.extend_from_slice(av.row(i));
        }
        let value = Tensor::new(index.len(), av.cols(), data)?;
        Ok(self.push(
            value,
            Op::GatherRows {
                input: a,
                index: index.into(),
            },
            self.rg(&[a]),
        ))
    }

    pub fn leaky_relu(&self, a: Var, slope: f64) -> Var {
        self.unary(a, Op::LeakyRelu(a, slope), |x| if x >= 0.0 { x } else { slope * x })
    }

    pub fn elu(&self, a: Var, alpha: f64) -> Var {
        self.unary(a, Op::Elu(a, alpha), |x| {
            if x > 0.0 {
                x
            } else {
                alpha * x.exp_m1()
            }
        })
    }

    pub fn sigmoid(&self, a: Var) -> Var {
        self.unary(a, Op::Sigmoid(a), sigmoid_scalar)
    }

    /// `max(0, x)`; at exactly zero the gradient is taken as 1.
    pub fn relu(&self, a: Var) -> Var {
        self.unary(a, Op::Relu(a), |x| x.max(0.0))
    }

    /// Dense softmax over the `true` entries of each row of `mask`; masked-out
    /// entries are exactly zero.
    pub fn masked_softmax(&self, scores: Var, mask: Arc<BitMatrix>) -> Result<Var> {
        let sv = self.value(scores);
        same_shape("masked_softmax", sv.shape(), (mask.rows(), mask.cols()))?;
        let mut value = Tensor::zeros(sv.rows(), sv.cols());
        for i in 0..sv.rows() {
            let cols: Vec<usize> = mask.row_indices(i).collect();
            if cols.is_empty() {
                return Err(TensorError::DegenerateNeighborhood { row: i });
            }
            let mut out = vec![0.0; cols.len()];
            softmax_into(cols.iter().map(|&j| sv.get(i, j)), &mut out);
            for (&j, v) in cols.iter().zip(out) {
                value.set(i, j, v);
            }
        }
        Ok(self.push(value, Op::MaskedSoftmax(scores, mask), self.rg(&[scores])))
    }

    /// Softmax across each full row.
    pub fn softmax_rows(&self, a: Var) -> Result<Var> {
        let av = self.value(a);
        if av.cols() == 0 {
            return Err(TensorError::DegenerateNeighborhood { row: 0 });
        }
        let mut value = Tensor::zeros(av.rows(), av.cols());
        for i in 0..av.rows() {
            softmax_into(av.row(i).iter().copied(), value.row_mut(i));
        }
        Ok(self.push(value, Op::SoftmaxRows(a), self.rg(&[a])))
    }

    /// For every entry `(i, j)` of `pattern`: `src[i] + dst[j]`. Both inputs
    /// are `n×1`; the result is `nnz×1` in pattern order.
    pub fn edge_scores(&self, src: Var, dst: Var, pattern: Arc<Pattern>) -> Result<Var> {
        let (sv, dv) = (self.value(src), self.value(dst));
        same_shape("edge_scores", sv.shape(), (pattern.rows(), 1))?;
        same_shape("edge_scores", dv.shape(), (pattern.cols(), 1))?;
        let mut data = Vec::with_capacity(pattern.nnz());
        for i in 0..pattern.rows() {
            let s = sv.data()[i];
            data.extend(pattern.row_cols(i).iter().map(|&j| s + dv.data()[j as usize]));
        }
        Ok(self.push(
            Tensor::column(data),
            Op::EdgeScores { src, dst, pattern },
            self.rg(&[src, dst]),
        ))
    }

    /// Softmax of an edge-valued `nnz×1` tensor within each pattern row.
    pub fn segment_softmax(&self, scores: Var, pattern: Arc<Pattern>) -> Result<Var> {
        let sv = self.value(scores);
        same_shape("segment_softmax", sv.shape(), (pattern.nnz(), 1))?;
        if let Some(row) = pattern.first_empty_row() {
            return Err(TensorError::DegenerateNeighborhood { row });
        }
        let mut data = vec![0.0; pattern.nnz()];
        for i in 0..pattern.rows() {
            let r = pattern.row_range(i);
            softmax_into(sv.data()[r.clone()].iter().copied(), &mut data[r]);
        }
        Ok(self.push(
            Tensor::column(data),
            Op::SegmentSoftmax(scores, pattern),
            self.rg(&[scores]),
        ))
    }

    /// Sparse-dense product: `out_i = Σ_{(i,j) ∈ pattern} w_ij · dense_j`.
    pub fn spmm(&self, weights: Var, pattern: Arc<Pattern>, dense: Var) -> Result<Var> {
        let (wv, zv) = (self.value(weights), self.value(dense));
        same_shape("spmm", wv.shape(), (pattern.nnz(), 1))?;
        if zv.rows() != pattern.cols() {
            return Err(TensorError::Shape {
                op: "spmm",
                left: (pattern.rows(), pattern.cols()),
                right: zv.shape(),
            });
        }
        let mut value = Tensor::zeros(pattern.rows(), zv.cols());
        for i in 0..pattern.rows() {
            let out_row = value.row_mut(i);
            for e in pattern.row_range(i) {
                let w = wv.data()[e];
                let j = pattern.col_idx()[e] as usize;
                for (o, &z) in out_row.iter_mut().zip(zv.row(j)) {
                    *o += w * z;
                }
            }
        }
        Ok(self.push(
            value,
            Op::SpMM {
                weights,
                pattern,
                dense,
            },
            self.rg(&[weights, dense]),
        ))
    }

    /// Elementwise `-[y·ln p + (1-y)·ln(1-p)]` against a constant label, with
    /// `p` clamped to `[eps, 1-eps]`. Clamped entries pass no gradient.
    pub fn logistic_loss(&self, probs: Var, label: f64, eps: f64) -> Result<Var> {
        if label != 0.0 && label != 1.0 {
            return Err(TensorError::Invalid(format!("label must be 0 or 1, got {label}")));
        }
        let value = self.value(probs).map(|p| {
            let p = p.clamp(eps, 1.0 - eps);
            -(label * p.ln() + (1.0 - label) * (1.0 - p).ln())
        });
        Ok(self.push(
            value,
            Op::LogisticLoss {
                input: probs,
                label,
                eps,
            },
            self.rg(&[probs]),
        ))
    }

    pub fn sum(&self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(a), self.rg(&[a]))
    }

    pub fn mean(&self, a: Var) -> Result<Var> {
        let av = self.value(a);
        if av.is_empty() {
            return Err(TensorError::Invalid("mean of an empty tensor".into()));
        }
        let m = av.data().iter().sum::<f64>() / av.len() as f64;
        Ok(self.push(Tensor::scalar(m), Op::Mean(a), self.rg(&[a])))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn t(rows: &[&[f64]]) -> Tensor {
        Tensor::from_rows(rows).unwrap()
    }

    #[test]
    fn matmul_examples() {
        let tape = Tape::new();
        let eye = tape.constant(t(&[&[1.0, 0.0], &[0.0, 1.0]]));
        let col = tape.constant(t(&[&[3.0], &[4.0]]));
        assert_eq!(*tape.value(tape.matmul(eye, col).unwrap()), t(&[&[3.0], &[4.0]]));

        let row = tape.constant(t(&[&[1.0, 2.0]]));
        assert_eq!(tape.value(tape.matmul(row, col).unwrap()).item(), Some(11.0));

        let zero = tape.constant(Tensor::zeros(3, 2));
        let any = tape.constant(t(&[&[1.5, -2.0, 7.0], &[0.3, 9.0, -1.0]]));
        let out = tape.value(tape.matmul(zero, any).unwrap());
        assert!(out.data().iter().all(|&x| x == 0.0));
        assert_eq!(out.shape(), (3, 3));

        match tape.matmul(col, col) {
            Err(TensorError::Shape { left, right, .. }) => {
                assert_eq!((left, right), ((2, 1), (2, 1)));
            }
            other => panic!("expected shape error, got {other:?}"),
        }
    }

    #[test]
    fn leaky_relu_examples() {
        let tape = Tape::new();
        let x = tape.param(t(&[&[2.0, -1.0, 0.0]]));
        let y = tape.leaky_relu(x, 0.2);
        assert_eq!(tape.value(y).data(), &[2.0, -0.2, 0.0]);
        let loss = tape.sum(y);
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[1.0, 0.2, 1.0]);
    }

    #[test]
    fn masked_softmax_examples() {
        let tape = Tape::new();
        let full = Arc::new(BitMatrix::full(1, 2));
        let s = tape.constant(t(&[&[5.0, 5.0]]));
        assert_eq!(tape.value(tape.masked_softmax(s, full.clone()).unwrap()).data(), &[0.5, 0.5]);

        let s = tape.constant(t(&[&[0.0, 3f64.ln()]]));
        let out = tape.value(tape.masked_softmax(s, full).unwrap());
        assert_abs_diff_eq!(out.get(0, 0), 0.25, epsilon = 1e-15);
        assert_abs_diff_eq!(out.get(0, 1), 0.75, epsilon = 1e-15);

        let single = Arc::new(BitMatrix::from_bools(1, 2, &[true, false]).unwrap());
        let s = tape.constant(t(&[&[100.0, 0.0]]));
        assert_eq!(tape.value(tape.masked_softmax(s, single).unwrap()).data(), &[1.0, 0.0]);

        let empty = Arc::new(BitMatrix::new(1, 2));
        assert_eq!(
            tape.masked_softmax(s, empty).unwrap_err(),
            TensorError::DegenerateNeighborhood { row: 0 }
        );
    }

    #[test]
    fn sigmoid_examples() {
        let tape = Tape::new();
        let x = tape.constant(t(&[&[0.0, -50.0, 3f64.ln()]]));
        let y = tape.value(tape.sigmoid(x));
        assert_eq!(y.get(0, 0), 0.5);
        assert!(y.get(0, 1) > 0.0 && y.get(0, 1) < 1e-20);
        assert_abs_diff_eq!(y.get(0, 2), 0.75, epsilon = 1e-15);
    }

    #[test]
    fn grouped_elementwise_examples() {
        let tape = Tape::new();
        let a = tape.constant(t(&[&[1.0]]));
        let b = tape.constant(t(&[&[2.0]]));
        assert_eq!(tape.value(tape.add(a, b).unwrap()).item(), Some(3.0));

        let l = tape.constant(t(&[&[1.0, 2.0]]));
        let r = tape.constant(t(&[&[3.0]]));
        assert_eq!(tape.value(tape.hconcat(l, r).unwrap()).data(), &[1.0, 2.0, 3.0]);

        let m = tape.constant(t(&[&[-1.0]]));
        let e = tape.value(tape.elu(m, 1.0)).item().unwrap();
        assert_abs_diff_eq!(e, (-1f64).exp() - 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(e, -0.6321, epsilon = 1e-4);

        let wide = tape.constant(Tensor::zeros(2, 2));
        assert!(matches!(tape.add(a, wide), Err(TensorError::Shape { .. })));
        assert!(matches!(tape.hadamard(a, wide), Err(TensorError::Shape { .. })));
        assert!(matches!(tape.row_dot(a, wide), Err(TensorError::Shape { .. })));
        assert!(matches!(tape.hconcat(r, wide), Err(TensorError::Shape { .. })));
    }

    #[test]
    fn sparse_ops_match_dense_masked_softmax() {
        let mask = BitMatrix::from_bools(
            3,
            3,
            &[true, true, false, true, true, true, false, true, true],
        )
        .unwrap();
        let pattern = Arc::new(mask.to_pattern());
        let tape = Tape::new();
        let src = tape.constant(Tensor::column(vec![0.1, -0.4, 0.7]));
        let dst = tape.constant(Tensor::column(vec![0.3, 0.2, -0.9]));
        let e = tape.edge_scores(src, dst, pattern.clone()).unwrap();
        let a = tape.value(tape.segment_softmax(e, pattern.clone()).unwrap());

        let mut dense = Tensor::zeros(3, 3);
        for i in 0..3 {
            for j in 0..3 {
                dense.set(i, j, [0.1, -0.4, 0.7][i] + [0.3, 0.2, -0.9][j]);
            }
        }
        let d = tape.constant(dense);
        let reference = tape.value(tape.masked_softmax(d, Arc::new(mask)).unwrap());
        let mut k = 0;
        for i in 0..3 {
            for &j in pattern.row_cols(i) {
                assert_abs_diff_eq!(a.data()[k], reference.get(i, j as usize), epsilon = 1e-15);
                k += 1;
            }
        }
    }

    #[test]
    fn logistic_loss_rejects_bad_label() {
        let tape = Tape::new();
        let p = tape.constant(Tensor::scalar(0.5));
        assert!(tape.logistic_loss(p, 0.5, 1e-12).is_err());
    }
}
