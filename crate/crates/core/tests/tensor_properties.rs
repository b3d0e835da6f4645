use std::sync::Arc;

use lsdan::tensor::{BitMatrix, Pattern, Tape, Tensor, Var};
use proptest::prelude::*;

const STEP: f64 = 1e-5;

/// Central-difference check of `f` at every entry of every input. The scalar
/// is `Σ w ⊙ f(inputs)` with fixed pseudo-random weights, which exercises the
/// full Jacobian instead of a plain sum.
fn check_gradients(inputs: &[Tensor], f: impl Fn(&Tape, &[Var]) -> Var) -> f64 {
    let weigh = |tape: &Tape, out: Var| {
        let (r, c) = tape.shape(out);
        let w: Vec<f64> = (0..r * c).map(|k| 0.5 + ((k * 7919) % 13) as f64 / 10.0).collect();
        let wv = tape.constant(Tensor::new(r, c, w).unwrap());
        tape.sum(tape.hadamard(out, wv).unwrap())
    };
    let eval = |xs: &[Tensor]| {
        let tape = Tape::new();
        let vars: Vec<Var> = xs.iter().map(|x| tape.param(x.clone())).collect();
        let out = f(&tape, &vars);
        let l = weigh(&tape, out);
        tape.value(l).item().unwrap()
    };
    let tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|x| tape.param(x.clone())).collect();
    let out = f(&tape, &vars);
    let l = weigh(&tape, out);
    let grads = tape.backward(l).unwrap();
    let mut worst: f64 = 0.0;
    for (k, x) in inputs.iter().enumerate() {
        let g = grads.get(vars[k]).unwrap();
        assert_eq!(g.shape(), x.shape());
        for e in 0..x.len() {
            let mut plus = inputs.to_vec();
            plus[k].data_mut()[e] += STEP;
            let mut minus = inputs.to_vec();
            minus[k].data_mut()[e] -= STEP;
            let numeric = (eval(&plus) - eval(&minus)) / (2.0 * STEP);
            let a = g.data()[e];
            worst = worst.max((a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-3));
        }
    }
    worst
}

/// Values bounded away from 0 so that kinks at the origin stay out of reach
/// of the finite-difference stencil.
fn off_zero(v: f64) -> f64 {
    if v >= 0.0 {
        v + 0.05
    } else {
        v - 0.05
    }
}

fn tensor(rows: usize, cols: usize) -> impl Strategy<Value = Tensor> {
    prop::collection::vec(-2.0f64..2.0, rows * cols)
        .prop_map(move |d| Tensor::new(rows, cols, d.into_iter().map(off_zero).collect()).unwrap())
}

fn dims() -> impl Strategy<Value = (usize, usize, usize)> {
    (1usize..=6, 1usize..=6, 1usize..=6)
}

/// Random mask with at least one entry per row.
fn mask(rows: usize, cols: usize) -> impl Strategy<Value = BitMatrix> {
    (prop::collection::vec(any::<bool>(), rows * cols), prop::collection::vec(0..cols, rows)).prop_map(
        move |(bits, forced)| {
            let mut m = BitMatrix::from_bools(rows, cols, &bits).unwrap();
            for (i, j) in forced.into_iter().enumerate() {
                m.set(i, j, true);
            }
            m
        },
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn matmul_gradients((a, b) in dims().prop_flat_map(|(n, k, m)| (tensor(n, k), tensor(k, m)))) {
        prop_assert!(check_gradients(&[a, b], |t, v| t.matmul(v[0], v[1]).unwrap()) < 1e-4);
    }

    #[test]
    fn elementwise_binary_gradients(a in tensor(3, 4), b in tensor(3, 4)) {
        let ab = [a, b];
        prop_assert!(check_gradients(&ab, |t, v| t.add(v[0], v[1]).unwrap()) < 1e-4);
        prop_assert!(check_gradients(&ab, |t, v| t.sub(v[0], v[1]).unwrap()) < 1e-4);
        prop_assert!(check_gradients(&ab, |t, v| t.hadamard(v[0], v[1]).unwrap()) < 1e-4);
        prop_assert!(check_gradients(&ab, |t, v| t.hconcat(v[0], v[1]).unwrap()) < 1e-4);
        prop_assert!(check_gradients(&ab, |t, v| t.row_dot(v[0], v[1]).unwrap()) < 1e-4);
        prop_assert!(check_gradients(&ab[..1], |t, v| t.scale(v[0], -1.7)) < 1e-4);
    }

    #[test]
    fn activation_gradients(a in tensor(4, 5)) {
        let a = [a];
        prop_assert!(check_gradients(&a, |t, v| t.leaky_relu(v[0], 0.2)) < 1e-4);
        prop_assert!(check_gradients(&a, |t, v| t.elu(v[0], 1.0)) < 1e-4);
        prop_assert!(check_gradients(&a, |t, v| t.sigmoid(v[0])) < 1e-4);
        prop_assert!(check_gradients(&a, |t, v| t.relu(v[0])) < 1e-4);
        prop_assert!(check_gradients(&a, |t, v| t.softmax_rows(v[0]).unwrap()) < 1e-4);
        prop_assert!(check_gradients(&a, |t, v| t.sum(v[0])) < 1e-4);
        prop_assert!(check_gradients(&a, |t, v| t.mean(v[0]).unwrap()) < 1e-4);
    }

    #[test]
    fn row_selection_gradients(a in tensor(5, 3), w in tensor(5, 1), idx in prop::collection::vec(0usize..5, 1..8)) {
        let aw = [a, w];
        prop_assert!(check_gradients(&aw[..1], |t, v| t.slice_rows(v[0], 1, 3).unwrap()) < 1e-4);
        prop_assert!(check_gradients(&aw[..1], |t, v| t.select_col(v[0], 2).unwrap()) < 1e-4);
        prop_assert!(check_gradients(&aw[..1], |t, v| t.gather_rows(v[0], &idx).unwrap()) < 1e-4);
        prop_assert!(check_gradients(&aw, |t, v| t.scale_rows(v[0], v[1]).unwrap()) < 1e-4);
    }

    #[test]
    fn masked_softmax_gradients(s in tensor(4, 5), m in mask(4, 5)) {
        let m = Arc::new(m);
        prop_assert!(check_gradients(&[s], |t, v| t.masked_softmax(v[0], m.clone()).unwrap()) < 1e-4);
    }

    #[test]
    fn sparse_attention_gradients(src in tensor(5, 1), dst in tensor(5, 1), z in tensor(5, 3), m in mask(5, 5)) {
        let p = Arc::new(m.to_pattern());
        let inputs = [src, dst, z];
        let err = check_gradients(&inputs, |t, v| {
            let e = t.edge_scores(v[0], v[1], p.clone()).unwrap();
            let a = t.segment_softmax(e, p.clone()).unwrap();
            t.spmm(a, p.clone(), v[2]).unwrap()
        });
        prop_assert!(err < 1e-4, "{}", err);
    }

    #[test]
    fn logistic_loss_gradients(p in prop::collection::vec(0.05f64..0.95, 1..8), label in 0u8..2) {
        let x = Tensor::column(p);
        let y = f64::from(label);
        prop_assert!(check_gradients(&[x], |t, v| t.logistic_loss(v[0], y, 1e-12).unwrap()) < 1e-4);
    }

    #[test]
    fn chained_sigmoid_matmul(a in tensor(4, 3), b in tensor(3, 2)) {
        let err = check_gradients(&[a, b], |t, v| {
            let m = t.matmul(v[0], v[1]).unwrap();
            t.sigmoid(m)
        });
        prop_assert!(err < 1e-4, "{}", err);
    }

    #[test]
    fn masked_softmax_rows_are_normalized(s in prop::collection::vec(-50.0f64..50.0, 30), m in mask(5, 6)) {
        let tape = Tape::new();
        let sv = tape.constant(Tensor::new(5, 6, s).unwrap());
        let out = tape.value(tape.masked_softmax(sv, Arc::new(m.clone())).unwrap());
        for i in 0..5 {
            let mut total = 0.0;
            for j in 0..6 {
                if m.get(i, j) {
                    total += out.get(i, j);
                } else {
                    prop_assert_eq!(out.get(i, j), 0.0);
                }
            }
            prop_assert!((total - 1.0).abs() <= 1e-9);
        }
    }

    #[test]
    fn segment_softmax_matches_dense_masked_softmax(s in prop::collection::vec(-50.0f64..50.0, 36), m in mask(6, 6)) {
        let dense = Tensor::new(6, 6, s).unwrap();
        let p: Pattern = m.to_pattern();
        let per_edge: Vec<f64> = (0..6)
            .flat_map(|i| p.row_cols(i).iter().map(move |&j| (i, j as usize)))
            .map(|(i, j)| dense.get(i, j))
            .collect();
        let tape = Tape::new();
        let ev = tape.constant(Tensor::column(per_edge));
        let sparse = tape.value(tape.segment_softmax(ev, Arc::new(p.clone())).unwrap());
        let dv = tape.constant(dense);
        let full = tape.value(tape.masked_softmax(dv, Arc::new(m)).unwrap());
        let mut k = 0;
        for i in 0..6 {
            for &j in p.row_cols(i) {
                prop_assert!((sparse.data()[k] - full.get(i, j as usize)).abs() < 1e-15);
                k += 1;
            }
        }
    }

    #[test]
    fn no_overflow_for_bounded_inputs(s in prop::collection::vec(-50.0f64..50.0, 20)) {
        let tape = Tape::new();
        let x = tape.param(Tensor::new(4, 5, s).unwrap());
        let sig = tape.sigmoid(x);
        let e = tape.elu(x, 1.0);
        let sm = tape.softmax_rows(x).unwrap();
        let l0 = tape.logistic_loss(sig, 1.0, 1e-12).unwrap();
        let l1 = tape.logistic_loss(sm, 0.0, 1e-12).unwrap();
        let total = tape.add(tape.sum(l0), tape.sum(l1)).unwrap();
        let total = tape.add(total, tape.sum(e)).unwrap();
        for v in [sig, e, sm, l0, l1, total] {
            prop_assert!(tape.value(v).is_finite());
        }
        let g = tape.backward(total).unwrap();
        prop_assert!(g.get(x).unwrap().is_finite());
    }

    #[test]
    fn backward_is_repeatable(a in tensor(3, 4), b in tensor(4, 2)) {
        let tape = Tape::new();
        let av = tape.param(a);
        let bv = tape.param(b);
        let m = tape.matmul(av, bv).unwrap();
        let l = tape.mean(tape.elu(m, 1.0)).unwrap();
        let g1 = tape.backward(l).unwrap();
        let g2 = tape.backward(l).unwrap();
        prop_assert_eq!(g1.get(av), g2.get(av));
        prop_assert_eq!(g1.get(bv), g2.get(bv));
    }
}

#[test]
fn unused_parameter_gets_zero_gradient() {
    let tape = Tape::new();
    let used = tape.param(Tensor::from_rows(&[[1.0, 2.0]]).unwrap());
    let unused = tape.param(Tensor::from_rows(&[[3.0], [4.0]]).unwrap());
    let l = tape.sum(tape.sigmoid(used));
    let g = tape.backward(l).unwrap();
    assert_eq!(g.get(unused).unwrap(), &Tensor::zeros(2, 1));
}

#[test]
fn shared_input_gradients_accumulate() {
    // f(x) = Σ x⊙x + 3·Σ x, so df/dx = 2x + 3
    let tape = Tape::new();
    let x = tape.param(Tensor::from_rows(&[[1.0, -2.0, 0.5]]).unwrap());
    let sq = tape.sum(tape.hadamard(x, x).unwrap());
    let lin = tape.scale(tape.sum(x), 3.0);
    let l = tape.add(sq, lin).unwrap();
    let g = tape.backward(l).unwrap();
    assert_eq!(g.get(x).unwrap().data(), &[5.0, -1.0, 4.0]);
}
