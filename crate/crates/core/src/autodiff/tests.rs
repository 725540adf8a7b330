use std::sync::Arc;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::sparse::CsrMatrix;

fn t(rows: &[Vec<f64>]) -> Tensor {
    Tensor::from_rows(rows).unwrap()
}

fn random(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Tensor {
    Tensor::from_vec(r, c, (0..r * c).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

/// Reduces `out` to a scalar through a fixed random weighting so every output
/// entry contributes a distinct adjoint.
fn weighted_sum(tape: &mut Tape, out: Var, seed: u64) -> Result<Var> {
    let (r, c) = tape.shape(out);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let w = random(&mut rng, r, c);
    let y = tape.mul_const(out, w)?;
    Ok(tape.sum(y))
}

#[test]
fn softmax_examples() {
    let mut tape = Tape::new();
    let x = tape.constant(t(&[vec![0.0, 0.0], vec![2f64.ln(), 0.0]]));
    let y = tape.row_softmax(x);
    let v = tape.value(y);
    assert_eq!(v.row(0), &[0.5, 0.5]);
    assert!((v.get(1, 0) - 2.0 / 3.0).abs() < 1e-15);
    assert!((v.get(1, 1) - 1.0 / 3.0).abs() < 1e-15);
}

#[test]
fn relu_example() {
    let mut tape = Tape::new();
    let x = tape.constant(t(&[vec![-1.0, 0.0, 2.0]]));
    let y = tape.relu(x);
    assert_eq!(tape.value(y).data(), &[0.0, 0.0, 2.0]);
}

#[test]
fn ln_rejects_non_positive() {
    let mut tape = Tape::new();
    let x = tape.constant(t(&[vec![1.0, 0.0]]));
    assert!(matches!(tape.ln(x), Err(Error::Domain(_))));
}

#[test]
fn shape_mismatch_is_argument_error() {
    let mut tape = Tape::new();
    let a = tape.constant(Tensor::zeros(2, 3));
    let b = tape.constant(Tensor::zeros(2, 3));
    assert!(matches!(tape.matmul(a, b), Err(Error::Argument(_))));
    let c = tape.constant(Tensor::zeros(3, 2));
    assert!(matches!(tape.add(a, c), Err(Error::Argument(_))));
}

#[test]
fn backward_of_sum_is_ones() {
    let mut tape = Tape::new();
    let w = tape.param(t(&[vec![1.0, -2.0], vec![3.0, 4.0]]));
    let loss = tape.sum(w);
    tape.backward(loss).unwrap();
    assert_eq!(tape.grad(w).unwrap().data(), &[1.0; 4]);
}

#[test]
fn backward_of_sq_norm_is_twice_w() {
    let mut tape = Tape::new();
    let wv = t(&[vec![1.0, -2.0], vec![0.5, 4.0]]);
    let w = tape.param(wv.clone());
    let loss = tape.sq_norm(w);
    tape.backward(loss).unwrap();
    assert_eq!(tape.grad(w).unwrap(), &wv.map(|x| 2.0 * x));
}

#[test]
fn backward_errors() {
    let mut tape = Tape::new();
    let w = tape.param(Tensor::filled(2, 2, 1.0));
    assert!(matches!(tape.backward(w), Err(Error::Argument(_))));
    let loss = tape.sum(w);
    tape.backward(loss).unwrap();
    assert!(matches!(tape.backward(loss), Err(Error::State(_))));
    tape.reset_grads();
    tape.backward(loss).unwrap();
}

#[test]
fn three_layer_composite_matches_fd() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let x = random(&mut rng, 5, 4);
    let params = vec![random(&mut rng, 4, 6), random(&mut rng, 1, 6), random(&mut rng, 6, 3)];
    let err = fd_check(
        |tape, p| {
            let xv = tape.constant(x.clone());
            let h = tape.matmul(xv, p[0])?;
            let h = tape.add(h, p[1])?;
            let h = tape.relu(h);
            let o = tape.matmul(h, p[2])?;
            let s = tape.row_softmax(o);
            let l = tape.ln(s)?;
            let l = tape.sum(l);
            Ok(tape.scale(l, -1.0))
        },
        &params,
        1e-5,
    )
    .unwrap();
    assert!(err < 1e-6, "{err}");
}

#[test]
fn quadratic_fd_error_tiny() {
    let params = vec![t(&[vec![0.3, -1.2, 2.0]])];
    let err = fd_check(
        |tape, p| {
            let s = tape.sq_norm(p[0]);
            Ok(tape.scale(s, 0.5))
        },
        &params,
        1e-5,
    )
    .unwrap();
    assert!(err < 1e-7, "{err}");
}

#[test]
fn constant_function_has_zero_error() {
    let params = vec![t(&[vec![1.0, 2.0]])];
    let err = fd_check(
        |tape, _| Ok(tape.constant(Tensor::scalar(3.0))),
        &params,
        1e-5,
    )
    .unwrap();
    assert_eq!(err, 0.0);
}

#[test]
fn dropout_modes() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut tape = Tape::new();
    let xv = random(&mut rng, 20, 10);
    let x = tape.constant(xv.clone());
    assert_eq!(tape.dropout(x, 0.0, true, &mut rng).unwrap(), x);
    assert_eq!(tape.dropout(x, 0.5, false, &mut rng).unwrap(), x);
    let y = tape.dropout(x, 0.5, true, &mut rng).unwrap();
    let mut zeros = 0;
    for (a, b) in tape.value(x).data().iter().zip(tape.value(y).data()) {
        if *b == 0.0 {
            zeros += 1;
        } else {
            assert_eq!(*b, 2.0 * a);
        }
    }
    assert!(zeros > 50 && zeros < 150, "{zeros}");
    assert!(tape.dropout(x, 1.0, true, &mut rng).is_err());
}

#[test]
fn mean_rows_of_empty_is_zero() {
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::zeros(0, 3));
    let m = tape.mean_rows(x);
    assert_eq!(tape.value(m).data(), &[0.0; 3]);
}

fn path_pattern(n: usize) -> Arc<AttentionPattern> {
    let rows = (0..n)
        .map(|v| {
            let mut r = vec![(v, 1.0)];
            if v > 0 {
                r.push((v - 1, 1.0));
            }
            if v + 1 < n {
                r.push((v + 1, 1.0));
            }
            r.sort_by_key(|e| e.0);
            r
        })
        .collect();
    Arc::new(AttentionPattern::new(CsrMatrix::from_rows(n, rows).unwrap()))
}

#[test]
fn attention_uniform_for_equal_logits() {
    let pat = path_pattern(3);
    let mut tape = Tape::new();
    let z = tape.constant(t(&[vec![1.0, 0.0], vec![0.0, 3.0], vec![2.0, 3.0]]));
    let s = tape.constant(Tensor::zeros(3, 1));
    let out = tape.graph_attention(z, s, s, pat, 0.2).unwrap();
    let v = tape.value(out);
    assert!((v.get(1, 0) - 1.0).abs() < 1e-15);
    assert!((v.get(1, 1) - 2.0).abs() < 1e-15);
    assert!((v.get(0, 1) - 1.5).abs() < 1e-15);
}

/// One of the unary/binary ops under fd test, applied to random inputs.
fn run_op(kind: usize, tape: &mut Tape, p: &[Var], aux: &Tensor) -> Result<Var> {
    Ok(match kind {
        0 => tape.matmul(p[0], p[1])?,
        1 => tape.add(p[0], p[2])?,
        2 => tape.mul(p[0], p[2])?,
        3 => tape.scale(p[0], -1.7),
        4 => tape.relu(p[0]),
        5 => tape.leaky_relu(p[0], 0.2),
        6 => tape.row_softmax(p[0]),
        7 => {
            let sq = tape.mul(p[0], p[0])?;
            let c = tape.constant(Tensor::filled(tape.shape(sq).0, tape.shape(sq).1, 0.5));
            let pos = tape.add(sq, c)?;
            tape.ln(pos)?
        }
        8 => tape.sum(p[0]),
        9 => tape.mean_rows(p[0]),
        10 => tape.sq_norm(p[0]),
        11 => {
            let rows = tape.shape(p[0]).0;
            tape.gather_rows(p[0], Arc::new(vec![rows - 1, 0, rows - 1]))?
        }
        12 => {
            let rows = tape.shape(p[0]).0;
            let factors = (0..rows).map(|i| i as f64 - 0.5).collect();
            tape.scale_rows(p[0], Arc::new(factors))?
        }
        13 => tape.sub(p[0], p[2])?,
        14 => {
            // row-bias broadcast
            let (_, c) = tape.shape(p[0]);
            let b = tape.gather_rows(p[2], Arc::new(vec![0]))?;
            debug_assert_eq!(tape.shape(b), (1, c));
            tape.add(p[0], b)?
        }
        15 => {
            let rows = tape.shape(p[0]).0;
            let m = CsrMatrix::from_rows(
                rows,
                (0..rows)
                    .map(|r| vec![(r, 0.5), ((r + 1) % rows, -1.25)])
                    .collect(),
            )?;
            tape.spmm(Arc::new(crate::sparse::SparseOperator::new(m)), p[0])?
        }
        16 => {
            let rows = tape.shape(p[0]).0;
            let pat = path_pattern(rows);
            let col = tape.constant(aux.clone());
            let sd = tape.matmul(p[0], col)?;
            let ss = tape.matmul(p[2], col)?;
            tape.graph_attention(p[0], sd, ss, pat, 0.2)?
        }
        17 => {
            let sq = tape.mul(p[0], p[0])?;
            tape.clamp_min(sq, 0.05)
        }
        18 => tape.pick(p[0], vec![(0, 0), (1, 1), (0, 0)])?,
        19 => {
            let b = tape.gather_rows(p[2], Arc::new(vec![1]))?;
            let b = tape.matmul(b, p[1])?;
            tape.affine(p[0], p[1], b)?
        }
        20 => {
            let beta = tape.scale(p[0], 0.3);
            tape.film(p[2], p[0], beta)?
        }
        21 => {
            let rows = tape.shape(p[0]).0;
            let m0: Vec<f64> = (0..rows).map(|i| (i % 2) as f64).collect();
            let m1 = m0.iter().map(|m| 1.0 - m).collect();
            tape.group_mix(p[0], p[2], Arc::new(m0), Arc::new(m1), 0.7)?
        }
        _ => unreachable!(),
    })
}

const NUM_OPS: usize = 22;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(110))]

    #[test]
    fn every_op_passes_fd(seed in any::<u64>(), rows in 2usize..6, inner in 2usize..5, cols in 2usize..5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = vec![
            random(&mut rng, rows, inner),
            random(&mut rng, inner, cols),
            random(&mut rng, rows, inner),
        ];
        let aux = random(&mut rng, inner, 1);
        for kind in 0..NUM_OPS {
            let err = fd_check(
                |tape, p| {
                    let out = run_op(kind, tape, p, &aux)?;
                    weighted_sum(tape, out, seed)
                },
                &params,
                1e-5,
            ).unwrap();
            prop_assert!(err < 1e-5, "op {} error {}", kind, err);
        }
    }

    #[test]
    fn softmax_rows_positive_and_normalized(seed in any::<u64>(), rows in 1usize..8, cols in 1usize..8, scale in 0.1f64..50.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut tape = Tape::new();
        let x = tape.constant(random(&mut rng, rows, cols).map(|v| v * scale));
        let y = tape.row_softmax(x);
        for r in 0..rows {
            let row = tape.value(y).row(r);
            prop_assert!(row.iter().all(|&p| p > 0.0));
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn backward_is_linear(seed in any::<u64>(), a in -3.0f64..3.0, b in -3.0f64..3.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w0 = random(&mut rng, 3, 4);
        let x = random(&mut rng, 5, 3);
        let f = |tape: &mut Tape, w: Var| -> Result<Var> {
            let xv = tape.constant(x.clone());
            let h = tape.matmul(xv, w)?;
            let s = tape.row_softmax(h);
            Ok(tape.sq_norm(s))
        };
        let g = |tape: &mut Tape, w: Var| -> Result<Var> {
            let h = tape.leaky_relu(w, 0.2);
            Ok(tape.sum(h))
        };
        let grad_of = |which: u8| -> Tensor {
            let mut tape = Tape::new();
            let w = tape.param(w0.clone());
            let loss = match which {
                0 => f(&mut tape, w).unwrap(),
                1 => g(&mut tape, w).unwrap(),
                _ => {
                    let fv = f(&mut tape, w).unwrap();
                    let gv = g(&mut tape, w).unwrap();
                    let fa = tape.scale(fv, a);
                    let gb = tape.scale(gv, b);
                    tape.add(fa, gb).unwrap()
                }
            };
            tape.backward(loss).unwrap();
            tape.grad(w).unwrap().clone()
        };
        let (gf, gg, gc) = (grad_of(0), grad_of(1), grad_of(2));
        for i in 0..gc.len() {
            let expected = a * gf.data()[i] + b * gg.data()[i];
            prop_assert!((gc.data()[i] - expected).abs() < 1e-10);
        }
    }

    #[test]
    fn eval_dropout_is_bit_exact(seed in any::<u64>(), p in 0.0f64..0.99) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut tape = Tape::new();
        let xv = random(&mut rng, 4, 4);
        let x = tape.constant(xv.clone());
        let y = tape.dropout(x, p, false, &mut rng).unwrap();
        prop_assert_eq!(tape.value(y), &xv);
    }
}
