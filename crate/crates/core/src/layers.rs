//! The degree-fair layer: sinusoidal degree encoding, context pooling, FiLM
//! scaling/shifting, group-specific debiasing contexts and the modulated
//! neighborhood aggregation over GCN, GraphSAGE or GAT.

use rand::Rng;

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::operators::GraphOperators;
use crate::params::{BaseWeights, Dense, LayerParams, Params};
use crate::sparse::{CsrMatrix, SparseOperator};
use crate::tensor::Tensor;

pub const GAT_SLOPE: f64 = 0.2;

/// `[sin(deg / 10000^{2i/w}), cos(deg / 10000^{2i/w})]` interleaved, `w` even.
pub fn degree_encoding(deg: f64, width: usize) -> Result<Vec<f64>> {
    if !width.is_multiple_of(2) {
        return Err(Error::arg(format!("degree encoding width {width} must be even")));
    }
    let mut out = Vec::with_capacity(width);
    for i in 0..width / 2 {
        let angle = deg / 10000f64.powf(2.0 * i as f64 / width as f64);
        out.push(angle.sin());
        out.push(angle.cos());
    }
    Ok(out)
}

/// Mean of `h_prev` rows over each node's context. An empty context yields a
/// zero row.
pub fn context_embedding(h_prev: &Tensor, contexts: &[Vec<usize>]) -> Result<Tensor> {
    context_operator(contexts, h_prev.rows())?.forward.spmm(h_prev)
}

pub fn context_operator(contexts: &[Vec<usize>], n: usize) -> Result<SparseOperator> {
    let rows = contexts
        .iter()
        .map(|ctx| {
            let w = 1.0 / ctx.len().max(1) as f64;
            ctx.iter().map(|&u| (u, w)).collect()
        })
        .collect();
    Ok(SparseOperator::new(CsrMatrix::from_rows(n, rows)?))
}

pub fn dense_forward(tape: &mut Tape, x: Var, layer: &Dense<Var>) -> Result<Var> {
    tape.affine(x, layer.weight, layer.bias)
}

/// Scaling and shifting factors from degree encodings, one linear map each.
pub fn film_factors(
    tape: &mut Tape,
    delta: Var,
    theta_gamma: &Dense<Var>,
    theta_beta: &Dense<Var>,
) -> Result<(Var, Var)> {
    let gamma = dense_forward(tape, delta, theta_gamma)?;
    let beta = dense_forward(tape, delta, theta_beta)?;
    Ok((gamma, beta))
}

/// `(gamma + 1) ⊙ f(c) + beta` with `f(c) = c·W + b`.
pub fn debias_context(
    tape: &mut Tape,
    c: Var,
    gamma: Var,
    beta: Var,
    theta_c: &Dense<Var>,
) -> Result<Var> {
    let f = dense_forward(tape, c, theta_c)?;
    tape.film(gamma, f, beta)
}

/// Pre-activation output of the base aggregator.
pub fn base_aggregate(
    tape: &mut Tape,
    h_prev: Var,
    ops: &GraphOperators,
    omega: &BaseWeights<Var>,
) -> Result<Var> {
    match omega {
        BaseWeights::Gcn { weight } => {
            let hw = tape.matmul(h_prev, *weight)?;
            tape.spmm(ops.gcn.clone(), hw)
        }
        BaseWeights::Sage {
            self_weight,
            neigh_weight,
        } => {
            let own = tape.matmul(h_prev, *self_weight)?;
            let mean = tape.spmm(ops.neighbor_mean.clone(), h_prev)?;
            let neigh = tape.matmul(mean, *neigh_weight)?;
            tape.add(own, neigh)
        }
        BaseWeights::Gat { heads } => {
            if heads.is_empty() {
                return Err(Error::Config("gat layer without attention heads".into()));
            }
            let mut total: Option<Var> = None;
            for head in heads {
                let z = tape.matmul(h_prev, head.weight)?;
                let s_dst = tape.matmul(z, head.att_dst)?;
                let s_src = tape.matmul(z, head.att_src)?;
                let out = tape.graph_attention(z, s_dst, s_src, ops.attention.clone(), GAT_SLOPE)?;
                total = Some(match total {
                    None => out,
                    Some(t) => tape.add(t, out)?,
                });
            }
            let total = total.expect("at least one head");
            Ok(tape.scale(total, 1.0 / heads.len() as f64))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Softmax,
}

/// Everything one layer leaves behind for the objective.
#[derive(Debug, Clone, Copy)]
pub struct LayerTraceEntry {
    pub h: Var,
    pub d0: Var,
    pub d1: Var,
    pub gamma: Var,
    pub beta: Var,
}

/// `σ(Aggr(h_prev) + eps · (1[S0]·D0 + 1[S1]·D1))`. Both debiasing contexts
/// are computed for every node.
pub fn fair_layer_forward(
    tape: &mut Tape,
    h_prev: Var,
    ops: &GraphOperators,
    layer: &LayerParams<Var>,
    eps: f64,
    activation: Activation,
) -> Result<LayerTraceEntry> {
    if tape.shape(h_prev).0 != ops.num_nodes {
        return Err(Error::arg("activation rows do not match the graph"));
    }
    let aggregated = base_aggregate(tape, h_prev, ops, &layer.omega)?;
    let width = tape.shape(layer.theta_gamma.weight).0;
    let table = tape.constant(ops.encoding_table(width)?);
    let (gamma_d, beta_d) = film_factors(tape, table, &layer.theta_gamma, &layer.theta_beta)?;
    let gamma = tape.gather_rows(gamma_d, ops.degree_slot.clone())?;
    let beta = tape.gather_rows(beta_d, ops.degree_slot.clone())?;

    let c = tape.spmm(ops.context_mean.clone(), h_prev)?;
    let d0 = debias_context(tape, c, gamma, beta, &layer.theta_c0)?;
    let d1 = debias_context(tape, c, gamma, beta, &layer.theta_c1)?;

    let modulation = tape.group_mix(d0, d1, ops.s0_mask.clone(), ops.s1_mask.clone(), eps)?;
    let pre = tape.add(aggregated, modulation)?;
    let h = match activation {
        Activation::Relu => tape.relu(pre),
        Activation::Softmax => tape.row_softmax(pre),
    };
    Ok(LayerTraceEntry {
        h,
        d0,
        d1,
        gamma,
        beta,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ForwardSettings {
    pub eps: f64,
    pub dropout: f64,
    /// Also drop input features, not only hidden activations.
    pub input_dropout: bool,
    pub train: bool,
}

impl ForwardSettings {
    pub fn eval(eps: f64) -> Self {
        ForwardSettings {
            eps,
            dropout: 0.0,
            input_dropout: false,
            train: false,
        }
    }
}

/// Per-layer traces plus the output class probabilities.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub layers: Vec<LayerTraceEntry>,
    pub probs: Var,
}

/// Full model: ReLU hidden layers with dropout in train mode, softmax output.
pub fn model_forward<R: Rng + ?Sized>(
    tape: &mut Tape,
    ops: &GraphOperators,
    features: &Tensor,
    params: &Params<Var>,
    settings: &ForwardSettings,
    rng: &mut R,
) -> Result<ForwardTrace> {
    let mut h = tape.constant(features.clone());
    if settings.input_dropout {
        h = tape.dropout(h, settings.dropout, settings.train, rng)?;
    }
    let last = params.layers.len() - 1;
    let mut layers = Vec::with_capacity(params.layers.len());
    for (l, layer) in params.layers.iter().enumerate() {
        let act = if l == last {
            Activation::Softmax
        } else {
            Activation::Relu
        };
        let entry = fair_layer_forward(tape, h, ops, layer, settings.eps, act)?;
        h = entry.h;
        if l != last {
            h = tape.dropout(h, settings.dropout, settings.train, rng)?;
        }
        layers.push(entry);
    }
    Ok(ForwardTrace {
        probs: layers[last].h,
        layers,
    })
}

/// The plain base GNN using only the aggregator weights.
pub fn base_model_forward<R: Rng + ?Sized>(
    tape: &mut Tape,
    ops: &GraphOperators,
    features: &Tensor,
    params: &Params<Var>,
    settings: &ForwardSettings,
    rng: &mut R,
) -> Result<Var> {
    let mut h = tape.constant(features.clone());
    if settings.input_dropout {
        h = tape.dropout(h, settings.dropout, settings.train, rng)?;
    }
    let last = params.layers.len() - 1;
    for (l, layer) in params.layers.iter().enumerate() {
        let pre = base_aggregate(tape, h, ops, &layer.omega)?;
        if l == last {
            h = tape.row_softmax(pre);
        } else {
            h = tape.relu(pre);
            h = tape.dropout(h, settings.dropout, settings.train, rng)?;
        }
    }
    Ok(h)
}
