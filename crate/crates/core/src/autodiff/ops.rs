use crate::error::Result;
use crate::par;
use crate::tensor::{dot, Tensor};

use super::{softmax_in_place, AttentionPattern, Node, Op, Var};

/// Adjoint contributions of one recorded op to its inputs.
pub(super) fn adjoints(nodes: &[Node], op: &Op, out: &Tensor, g: &Tensor) -> Result<Vec<(Var, Tensor)>> {
    let val = |v: &Var| &nodes[v.0].value;
    let needs = |v: &Var| nodes[v.0].requires_grad;
    let mut res = Vec::with_capacity(2);
    match op {
        Op::Leaf => {}
        Op::MatMul(a, b) => {
            if needs(a) {
                res.push((*a, g.matmul_t(val(b))?));
            }
            if needs(b) {
                res.push((*b, val(a).t_matmul(g)?));
            }
        }
        Op::Add(a, b) => {
            if needs(a) {
                res.push((*a, g.clone()));
            }
            if needs(b) {
                res.push((*b, g.clone()));
            }
        }
        Op::Affine(x, w, b) => {
            if needs(x) {
                res.push((*x, g.matmul_t(val(w))?));
            }
            if needs(w) {
                res.push((*w, val(x).t_matmul(g)?));
            }
            if needs(b) {
                res.push((*b, column_sums(g)));
            }
        }
        Op::Film { gamma, f, beta } => {
            if needs(gamma) {
                res.push((*gamma, g.zip_map(val(f), |x, y| x * y)));
            }
            if needs(f) {
                res.push((*f, g.zip_map(val(gamma), |x, y| x * y + x)));
            }
            if needs(beta) {
                res.push((*beta, g.clone()));
            }
        }
        Op::GroupMix { d0, d1, m0, m1, eps } => {
            for (d, m) in [(d0, m0), (d1, m1)] {
                if needs(d) {
                    let mut out = g.clone();
                    let cols = out.cols();
                    par::for_each_row(out.data_mut(), cols, |i, row| {
                        row.iter_mut().for_each(|x| *x *= eps * m[i])
                    });
                    res.push((*d, out));
                }
            }
        }
        Op::AddRowBias(a, b) => {
            if needs(b) {
                res.push((*b, column_sums(g)));
            }
            if needs(a) {
                res.push((*a, g.clone()));
            }
        }
        Op::Sub(a, b) => {
            res.push((*a, g.clone()));
            if needs(b) {
                res.push((*b, g.map(|x| -x)));
            }
        }
        Op::Mul(a, b) => {
            if needs(a) {
                res.push((*a, g.zip_map(val(b), |x, y| x * y)));
            }
            if needs(b) {
                res.push((*b, g.zip_map(val(a), |x, y| x * y)));
            }
        }
        Op::Scale(a, s) => res.push((*a, g.map(|x| x * s))),
        Op::MulConst(a, c) => res.push((*a, g.zip_map(c, |x, y| x * y))),
        Op::ScaleRows(a, f) => {
            let mut d = g.clone();
            let cols = d.cols();
            par::for_each_row(d.data_mut(), cols, |i, row| {
                row.iter_mut().for_each(|x| *x *= f[i])
            });
            res.push((*a, d));
        }
        Op::Relu(a) => res.push((*a, g.zip_map(out, |x, y| if y > 0.0 { x } else { 0.0 }))),
        Op::LeakyRelu(a, slope) => {
            let s = *slope;
            res.push((*a, g.zip_map(val(a), |x, y| if y > 0.0 { x } else { s * x })));
        }
        Op::RowSoftmax(a) => {
            let mut d = g.clone();
            let cols = d.cols();
            par::for_each_row(d.data_mut(), cols, |i, row| {
                let y = out.row(i);
                let inner = dot(row, y);
                row.iter_mut()
                    .zip(y)
                    .for_each(|(gx, &yv)| *gx = yv * (*gx - inner));
            });
            res.push((*a, d));
        }
        Op::Ln(a) => res.push((*a, g.zip_map(val(a), |x, y| x / y))),
        Op::ClampMin(a, floor) => {
            let f = *floor;
            res.push((*a, g.zip_map(val(a), |x, y| if y > f { x } else { 0.0 })));
        }
        Op::Sum(a) => {
            let (r, c) = val(a).shape();
            res.push((*a, Tensor::filled(r, c, g.data()[0])));
        }
        Op::MeanRows(a) => {
            let (r, c) = val(a).shape();
            let mut d = Tensor::zeros(r, c);
            if r > 0 {
                let row: Vec<f64> = g.row(0).iter().map(|x| x / r as f64).collect();
                for i in 0..r {
                    d.row_mut(i).copy_from_slice(&row);
                }
            }
            res.push((*a, d));
        }
        Op::SqNorm(a) => {
            let s = 2.0 * g.data()[0];
            res.push((*a, val(a).map(|x| s * x)));
        }
        Op::GatherRows(a, idx) => {
            let (r, c) = val(a).shape();
            let mut d = Tensor::zeros(r, c);
            for (o, &i) in idx.iter().enumerate() {
                d.row_mut(i)
                    .iter_mut()
                    .zip(g.row(o))
                    .for_each(|(x, y)| *x += y);
            }
            res.push((*a, d));
        }
        Op::Pick(a, positions) => {
            let (r, c) = val(a).shape();
            let mut d = Tensor::zeros(r, c);
            for (k, &(i, j)) in positions.iter().enumerate() {
                d.set(i, j, d.get(i, j) + g.get(k, 0));
            }
            res.push((*a, d));
        }
        Op::Spmm(op, a) => res.push((*a, op.adjoint.spmm(g)?)),
        Op::GraphAttention {
            z,
            s_dst,
            s_src,
            pattern,
            slope,
            alpha,
            logits,
        } => {
            let (dz, ds_dst, ds_src) =
                attention_backward(pattern, val(z), alpha, logits, *slope, g);
            if needs(z) {
                res.push((*z, dz));
            }
            if needs(s_dst) {
                res.push((*s_dst, ds_dst));
            }
            if needs(s_src) {
                res.push((*s_src, ds_src));
            }
        }
    }
    Ok(res)
}

pub(super) fn attention_forward(
    pattern: &AttentionPattern,
    z: &Tensor,
    s_dst: &[f64],
    s_src: &[f64],
    slope: f64,
    d: usize,
) -> (Tensor, Vec<f64>, Vec<f64>) {
    let csr = &pattern.rows;
    let n = csr.rows();
    let per_row: Vec<(Vec<f64>, Vec<f64>, Vec<f64>)> = par::map_indices(n, |v| {
        let (cols, _) = csr.row(v);
        let logits: Vec<f64> = cols.iter().map(|&u| s_dst[v] + s_src[u]).collect();
        let mut alpha: Vec<f64> = logits
            .iter()
            .map(|&x| if x > 0.0 { x } else { slope * x })
            .collect();
        softmax_in_place(&mut alpha);
        let mut out = vec![0.0; d];
        for (&u, &a) in cols.iter().zip(&alpha) {
            out.iter_mut().zip(z.row(u)).for_each(|(o, x)| *o += a * x);
        }
        (out, alpha, logits)
    });
    let mut out = Tensor::zeros(n, d);
    let mut alpha = Vec::with_capacity(csr.nnz());
    let mut logits = Vec::with_capacity(csr.nnz());
    for (v, (o, a, l)) in per_row.into_iter().enumerate() {
        out.row_mut(v).copy_from_slice(&o);
        alpha.extend(a);
        logits.extend(l);
    }
    (out, alpha, logits)
}

fn attention_backward(
    pattern: &AttentionPattern,
    z: &Tensor,
    alpha: &[f64],
    logits: &[f64],
    slope: f64,
    g: &Tensor,
) -> (Tensor, Tensor, Tensor) {
    let csr = &pattern.rows;
    let n = csr.rows();
    let offsets: Vec<usize> = (0..=n)
        .scan(0usize, |acc, r| {
            let cur = *acc;
            if r < n {
                *acc += csr.row(r).0.len();
            }
            Some(cur)
        })
        .collect();

    // d logit for every nonzero, computed row by row.
    let dlogit_rows: Vec<Vec<f64>> = par::map_indices(n, |v| {
        let (cols, _) = csr.row(v);
        let base = offsets[v];
        let gv = g.row(v);
        let dalpha: Vec<f64> = cols.iter().map(|&u| dot(gv, z.row(u))).collect();
        let a = &alpha[base..base + cols.len()];
        let inner: f64 = a.iter().zip(&dalpha).map(|(x, y)| x * y).sum();
        a.iter()
            .zip(&dalpha)
            .zip(&logits[base..base + cols.len()])
            .map(|((&ai, &dai), &x)| {
                let de = ai * (dai - inner);
                if x > 0.0 {
                    de
                } else {
                    slope * de
                }
            })
            .collect()
    });
    let dlogit: Vec<f64> = dlogit_rows.into_iter().flatten().collect();

    let mut ds_dst = Tensor::zeros(n, 1);
    for v in 0..n {
        let s: f64 = dlogit[offsets[v]..offsets[v + 1]].iter().sum();
        ds_dst.set(v, 0, s);
    }

    let d = z.cols();
    let mut dz = Tensor::zeros(n, d);
    let mut ds_src = Tensor::zeros(n, 1);
    for u in 0..n {
        let incoming = &pattern.incoming[pattern.incoming_offsets[u]..pattern.incoming_offsets[u + 1]];
        ds_src.set(u, 0, incoming.iter().map(|&(_, p)| dlogit[p]).sum());
    }
    par::for_each_row(dz.data_mut(), d, |u, row| {
        let incoming = &pattern.incoming[pattern.incoming_offsets[u]..pattern.incoming_offsets[u + 1]];
        for &(v, p) in incoming {
            let a = alpha[p];
            row.iter_mut().zip(g.row(v)).for_each(|(o, x)| *o += a * x);
        }
    });
    (dz, ds_dst, ds_src)
}

fn column_sums(g: &Tensor) -> Tensor {
    let mut out = Tensor::zeros(1, g.cols());
    for r in 0..g.rows() {
        out.row_mut(0).iter_mut().zip(g.row(r)).for_each(|(d, x)| *d += x);
    }
    out
}
