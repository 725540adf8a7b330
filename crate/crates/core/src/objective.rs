//! The training objective `L1 + μ·L2 + λ·(L3 + L4 + Ω)`.

use std::sync::Arc;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::layers::LayerTraceEntry;
use crate::params::{Params, Role};

/// Probabilities are clamped to at least this before taking logs.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l1: f64,
    pub l2: f64,
    pub l3: f64,
    pub l4: f64,
    pub omega_reg: f64,
    pub total: f64,
    pub mu: f64,
    pub lambda: f64,
}

impl LossBreakdown {
    pub fn combine(l1: f64, l2: f64, l3: f64, l4: f64, omega_reg: f64, mu: f64, lambda: f64) -> Result<Self> {
        check_weights(mu, lambda)?;
        Ok(LossBreakdown {
            l1,
            l2,
            l3,
            l4,
            omega_reg,
            total: l1 + mu * l2 + lambda * (l3 + l4 + omega_reg),
            mu,
            lambda,
        })
    }
}

fn check_weights(mu: f64, lambda: f64) -> Result<()> {
    if !(mu >= 0.0) || !(lambda >= 0.0) {
        return Err(Error::arg(format!("mu = {mu} and lambda = {lambda} must be >= 0")));
    }
    Ok(())
}

fn zero(tape: &mut Tape) -> Var {
    tape.constant(crate::tensor::Tensor::scalar(0.0))
}

fn rows(idx: &[usize]) -> Arc<Vec<usize>> {
    Arc::new(idx.to_vec())
}

/// Summed negative log-likelihood of the true class over `train_idx`.
pub fn classification_loss(tape: &mut Tape, probs: Var, labels: &[usize], train_idx: &[usize]) -> Result<Var> {
    if train_idx.is_empty() {
        return Err(Error::arg("classification loss over an empty training set"));
    }
    let positions = train_idx.iter().map(|&v| (v, labels[v])).collect();
    let picked = tape.pick(probs, positions)?;
    let clamped = tape.clamp_min(picked, PROB_FLOOR);
    let logs = tape.ln(clamped)?;
    let total = tape.sum(logs);
    Ok(tape.scale(total, -1.0))
}

/// Squared distance between the mean output rows of the two training groups.
/// Zero (with a warning) when either group is empty.
pub fn fairness_loss(tape: &mut Tape, h_final: Var, s0_tr: &[usize], s1_tr: &[usize]) -> Result<Var> {
    if s0_tr.is_empty() || s1_tr.is_empty() {
        warn!("a structural-contrast training group is empty; fairness loss set to 0");
        return Ok(zero(tape));
    }
    let a = tape.gather_rows(h_final, rows(s0_tr))?;
    let b = tape.gather_rows(h_final, rows(s1_tr))?;
    let ma = tape.mean_rows(a);
    let mb = tape.mean_rows(b);
    let diff = tape.sub(ma, mb)?;
    Ok(tape.sq_norm(diff))
}

/// Cross-group penalty: low-degree nodes penalize their `D1`, high-degree
/// nodes their `D0`, summed over layers.
pub fn debias_constraint(
    tape: &mut Tape,
    layers: &[LayerTraceEntry],
    s0_tr: &[usize],
    s1_tr: &[usize],
) -> Result<Var> {
    let mut acc = zero(tape);
    for e in layers {
        for (d, group) in [(e.d1, s0_tr), (e.d0, s1_tr)] {
            let g = tape.gather_rows(d, rows(group))?;
            let s = tape.sq_norm(g);
            acc = tape.add(acc, s)?;
        }
    }
    Ok(acc)
}

/// `Σ_l Σ_{v ∈ train} ‖γ_v‖² + ‖β_v‖²`.
pub fn film_constraint(tape: &mut Tape, layers: &[LayerTraceEntry], train_idx: &[usize]) -> Result<Var> {
    let mut acc = zero(tape);
    for e in layers {
        for m in [e.gamma, e.beta] {
            let g = tape.gather_rows(m, rows(train_idx))?;
            let s = tape.sq_norm(g);
            acc = tape.add(acc, s)?;
        }
    }
    Ok(acc)
}

/// Sum of squared entries of the given weight matrices.
pub fn weight_regularizer(tape: &mut Tape, weights: &[Var]) -> Result<Var> {
    let mut acc = zero(tape);
    for &w in weights {
        let s = tape.sq_norm(w);
        acc = tape.add(acc, s)?;
    }
    Ok(acc)
}

/// Weight (non-bias) entries of bound parameters.
pub fn weights_of(params: &Params<Var>) -> Vec<Var> {
    params
        .entries()
        .into_iter()
        .filter(|(_, role, _)| *role == Role::Weight)
        .map(|(_, _, v)| *v)
        .collect()
}

/// Scalar term handles of one objective evaluation.
#[derive(Debug, Clone, Copy)]
pub struct LossTerms {
    pub l1: Var,
    pub l2: Var,
    pub l3: Var,
    pub l4: Var,
    pub omega_reg: Var,
}

/// Combines the terms on the tape; the returned handle is the loss to
/// differentiate.
pub fn total_loss(tape: &mut Tape, terms: &LossTerms, mu: f64, lambda: f64) -> Result<(Var, LossBreakdown)> {
    check_weights(mu, lambda)?;
    let fair = tape.scale(terms.l2, mu);
    let reg = tape.add(terms.l3, terms.l4)?;
    let reg = tape.add(reg, terms.omega_reg)?;
    let reg = tape.scale(reg, lambda);
    let total = tape.add(terms.l1, fair)?;
    let total = tape.add(total, reg)?;
    let breakdown = LossBreakdown {
        l1: tape.scalar(terms.l1)?,
        l2: tape.scalar(terms.l2)?,
        l3: tape.scalar(terms.l3)?,
        l4: tape.scalar(terms.l4)?,
        omega_reg: tape.scalar(terms.omega_reg)?,
        total: tape.scalar(total)?,
        mu,
        lambda,
    };
    Ok((total, breakdown))
}

/// Node sets the objective restricts to.
#[derive(Debug, Clone)]
pub struct TrainingGroups {
    pub train: Vec<usize>,
    pub s0_train: Vec<usize>,
    pub s1_train: Vec<usize>,
}

impl TrainingGroups {
    /// Intersects the full-graph structural contrast with the training set.
    pub fn new(train: &[usize], s0_mask: &[f64]) -> Self {
        let (s0_train, s1_train) = train.iter().partition(|&&v| s0_mask[v] > 0.0);
        TrainingGroups {
            train: train.to_vec(),
            s0_train,
            s1_train,
        }
    }
}

/// Every term from one forward trace.
pub fn objective_terms(
    tape: &mut Tape,
    layers: &[LayerTraceEntry],
    probs: Var,
    params: &Params<Var>,
    labels: &[usize],
    groups: &TrainingGroups,
) -> Result<LossTerms> {
    Ok(LossTerms {
        l1: classification_loss(tape, probs, labels, &groups.train)?,
        l2: fairness_loss(tape, probs, &groups.s0_train, &groups.s1_train)?,
        l3: debias_constraint(tape, layers, &groups.s0_train, &groups.s1_train)?,
        l4: film_constraint(tape, layers, &groups.train)?,
        omega_reg: weight_regularizer(tape, &weights_of(params))?,
    })
}
