//! Training loop, model selection and prediction.

use std::fmt;
use std::str::FromStr;

use log::{debug, info};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Adam, AdamConfig, Tape};
use crate::error::{Error, Result};
use crate::graph::{mean_degree, Graph, NodeSplit};
use crate::layers::{base_model_forward, model_forward, ForwardSettings};
use crate::objective::{self, LossBreakdown, LossTerms, TrainingGroups};
use crate::operators::GraphOperators;
use crate::params::{Architecture, BaseKind, ModelParams};
use crate::tensor::Tensor;

/// Structural-contrast threshold: a fixed degree or the graph's mean degree.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ThresholdRepr", into = "ThresholdRepr")]
pub enum Threshold {
    Mean,
    Value(f64),
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum ThresholdRepr {
    Value(f64),
    Name(String),
}

impl TryFrom<ThresholdRepr> for Threshold {
    type Error = String;

    fn try_from(r: ThresholdRepr) -> std::result::Result<Self, String> {
        match r {
            ThresholdRepr::Value(v) => Ok(Threshold::Value(v)),
            ThresholdRepr::Name(s) if s == "mean" => Ok(Threshold::Mean),
            ThresholdRepr::Name(s) => Err(format!("threshold must be a number or \"mean\", got {s:?}")),
        }
    }
}

impl From<Threshold> for ThresholdRepr {
    fn from(t: Threshold) -> Self {
        match t {
            Threshold::Mean => ThresholdRepr::Name("mean".into()),
            Threshold::Value(v) => ThresholdRepr::Value(v),
        }
    }
}

impl Threshold {
    pub fn resolve(self, g: &Graph) -> Result<f64> {
        match self {
            Threshold::Mean => mean_degree(g),
            Threshold::Value(v) => Ok(v),
        }
    }
}

/// Named hyperparameter sets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    Chameleon,
    Squirrel,
    Emnlp,
    Synth,
}

impl Preset {
    pub const ALL: [Preset; 4] = [Preset::Chameleon, Preset::Squirrel, Preset::Emnlp, Preset::Synth];

    pub fn name(self) -> &'static str {
        match self {
            Preset::Chameleon => "chameleon",
            Preset::Squirrel => "squirrel",
            Preset::Emnlp => "emnlp",
            Preset::Synth => "synth",
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Preset::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown preset {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub base_gnn: BaseKind,
    pub hidden_dim: usize,
    pub num_layers: usize,
    /// Radius of the local context feeding the debiasing contexts.
    pub r_context: usize,
    /// Radius of the generalized degree used to form evaluation groups.
    pub r_eval: usize,
    pub k: Threshold,
    pub eps: f64,
    pub mu: f64,
    pub lambda: f64,
    pub lr: f64,
    pub dropout: f64,
    pub input_dropout: bool,
    pub epochs: usize,
    pub patience: usize,
    pub seed: u64,
    pub gat_heads: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            base_gnn: BaseKind::Gcn,
            hidden_dim: 32,
            num_layers: 2,
            r_context: 1,
            r_eval: 1,
            k: Threshold::Mean,
            eps: 1.0,
            mu: 0.001,
            lambda: 1e-4,
            lr: 0.01,
            dropout: 0.5,
            input_dropout: false,
            epochs: 1000,
            patience: 100,
            seed: 0,
            gat_heads: 3,
        }
    }
}

impl TrainConfig {
    pub fn preset(preset: Preset, base_gnn: BaseKind) -> Self {
        let (hidden_dim, eps, mu) = match preset {
            Preset::Chameleon => (32, 1.0, 0.001),
            Preset::Squirrel => (32, 0.01, 0.0001),
            Preset::Emnlp => (16, 0.001, 0.01),
            Preset::Synth => (16, 0.1, 10000.0),
        };
        let mut cfg = TrainConfig {
            base_gnn,
            hidden_dim,
            eps,
            mu,
            ..TrainConfig::default()
        };
        if preset == Preset::Synth {
            cfg.epochs = 200;
            cfg.patience = 200;
        }
        if base_gnn == BaseKind::Gat {
            cfg.hidden_dim = 16;
        }
        cfg
    }

    /// The same settings with the debiasing switched off: `ε = μ = λ = 0`.
    pub fn plain(&self) -> Self {
        TrainConfig {
            eps: 0.0,
            mu: 0.0,
            lambda: 0.0,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if !(self.eps >= 0.0) || !(self.mu >= 0.0) || !(self.lambda >= 0.0) {
            return bad(format!(
                "eps, mu and lambda must be >= 0 (got {}, {}, {})",
                self.eps, self.mu, self.lambda
            ));
        }
        if !(self.lr >= 0.0) || !self.lr.is_finite() {
            return bad(format!("lr must be a finite value >= 0, got {}", self.lr));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout must lie in [0, 1), got {}", self.dropout));
        }
        if self.epochs == 0 || self.patience == 0 {
            return bad("epochs and patience must be >= 1".into());
        }
        if self.num_layers == 0 || self.hidden_dim == 0 {
            return bad("num_layers and hidden_dim must be >= 1".into());
        }
        if self.r_context == 0 || self.r_eval == 0 {
            return bad("r_context and r_eval must be >= 1".into());
        }
        if self.base_gnn == BaseKind::Gat && self.gat_heads == 0 {
            return bad("gat_heads must be >= 1".into());
        }
        if let Threshold::Value(k) = self.k {
            if !k.is_finite() {
                return bad(format!("k must be finite, got {k}"));
            }
        }
        Ok(())
    }

    pub fn architecture(&self, feature_dim: usize, num_classes: usize) -> Architecture {
        let mut dims = vec![feature_dim];
        dims.extend(std::iter::repeat_n(self.hidden_dim, self.num_layers - 1));
        dims.push(num_classes);
        Architecture {
            kind: self.base_gnn,
            dims,
            gat_heads: self.gat_heads,
        }
    }

    fn train_settings(&self) -> ForwardSettings {
        ForwardSettings {
            eps: self.eps,
            dropout: self.dropout,
            input_dropout: self.input_dropout,
            train: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub losses: Vec<LossBreakdown>,
    pub train_accuracy: Vec<f64>,
    pub val_accuracy: Vec<f64>,
    /// Index into the per-epoch vectors of the returned parameters.
    pub best_epoch: usize,
}

impl TrainHistory {
    pub fn epochs_run(&self) -> usize {
        self.losses.len()
    }
}

pub fn init_params<R: rand::Rng + ?Sized>(arch: &Architecture, rng: &mut R) -> Result<ModelParams> {
    ModelParams::glorot(arch, rng)
}

/// Row-wise argmax; ties go to the lowest index.
pub fn argmax_rows(probs: &Tensor) -> Vec<usize> {
    (0..probs.rows())
        .map(|r| {
            let row = probs.row(r);
            let mut best = 0;
            for (j, &p) in row.iter().enumerate() {
                if p > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

fn accuracy_on(preds: &[usize], labels: &[usize], idx: &[usize]) -> f64 {
    if idx.is_empty() {
        return 0.0;
    }
    let hits = idx.iter().filter(|&&v| preds[v] == labels[v]).count();
    hits as f64 / idx.len() as f64
}

/// Operators for `g` under `config`'s context radius and threshold.
pub fn build_operators(g: &Graph, config: &TrainConfig) -> Result<GraphOperators> {
    let k = config.k.resolve(g)?;
    GraphOperators::new(g, config.r_context, k)
}

fn check_shapes(params: &ModelParams, g: &Graph) -> Result<()> {
    let first = &params.layers[0].theta_c0.weight;
    if first.rows() != g.feature_dim() {
        return Err(Error::Consistency(format!(
            "model expects {} input features, graph has {}",
            first.rows(),
            g.feature_dim()
        )));
    }
    Ok(())
}

/// Class probabilities with dropout disabled.
pub fn predict_probs_with(params: &ModelParams, g: &Graph, ops: &GraphOperators, config: &TrainConfig) -> Result<Tensor> {
    check_shapes(params, g)?;
    let mut tape = Tape::new();
    let bound = params.bind_constants(&mut tape);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let trace = model_forward(&mut tape, ops, g.features(), &bound, &ForwardSettings::eval(config.eps), &mut rng)?;
    Ok(tape.value(trace.probs).clone())
}

pub fn predict_probs(params: &ModelParams, g: &Graph, config: &TrainConfig) -> Result<Tensor> {
    let ops = build_operators(g, config)?;
    predict_probs_with(params, g, &ops, config)
}

/// Predicted class per node.
pub fn predict(params: &ModelParams, g: &Graph, config: &TrainConfig) -> Result<Vec<usize>> {
    Ok(argmax_rows(&predict_probs(params, g, config)?))
}

fn check_split(g: &Graph, split: &NodeSplit) -> Result<()> {
    let n = g.num_nodes();
    if split.train.is_empty() {
        return Err(Error::arg("training set is empty"));
    }
    if let Some(&v) = split.train.iter().chain(&split.val).chain(&split.test).find(|&&v| v >= n) {
        return Err(Error::arg(format!("split node {v} out of range for {n} nodes")));
    }
    Ok(())
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Mode {
    Fair,
    Base,
}

/// Trains the degree-fair model and returns the parameters of the epoch
/// with the best validation accuracy.
pub fn train(g: &Graph, split: &NodeSplit, config: &TrainConfig) -> Result<(ModelParams, TrainHistory)> {
    run(g, split, config, Mode::Fair)
}

/// Trains only the base aggregator weights with the plain base GNN forward
/// and loss `L1 + λ·Ω(ω)`. The debiasing parameters stay at their initial values.
pub fn train_base(g: &Graph, split: &NodeSplit, config: &TrainConfig) -> Result<(ModelParams, TrainHistory)> {
    run(g, split, config, Mode::Base)
}

/// Predictions of the plain base GNN using only `params`' aggregator weights.
pub fn predict_base(params: &ModelParams, g: &Graph, config: &TrainConfig) -> Result<Vec<usize>> {
    check_shapes(params, g)?;
    let ops = build_operators(g, config)?;
    let mut tape = Tape::new();
    let bound = params.bind_constants(&mut tape);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let probs = base_model_forward(&mut tape, &ops, g.features(), &bound, &ForwardSettings::eval(0.0), &mut rng)?;
    Ok(argmax_rows(tape.value(probs)))
}

fn run(g: &Graph, split: &NodeSplit, config: &TrainConfig, mode: Mode) -> Result<(ModelParams, TrainHistory)> {
    config.validate()?;
    check_split(g, split)?;
    let ops = build_operators(g, config)?;
    let groups = TrainingGroups::new(&split.train, &ops.s0_mask);
    let arch = config.architecture(g.feature_dim(), g.num_classes());
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut params = init_params(&arch, &mut rng)?;
    let trainable: Vec<bool> = params
        .entries()
        .iter()
        .map(|(name, _, _)| mode == Mode::Fair || name.contains(".omega."))
        .collect();
    let select_idx = if split.val.is_empty() { &split.train } else { &split.val };

    let mut opt = Adam::new(AdamConfig::with_lr(config.lr));
    let mut history = TrainHistory {
        losses: Vec::new(),
        train_accuracy: Vec::new(),
        val_accuracy: Vec::new(),
        best_epoch: 0,
    };
    let mut best: Option<(f64, ModelParams)> = None;
    let settings = config.train_settings();

    for epoch in 0..config.epochs {
        let mut tape = Tape::new();
        let bound = params.bind(&mut tape);
        let (loss, breakdown) = match mode {
            Mode::Fair => {
                let trace = model_forward(&mut tape, &ops, g.features(), &bound, &settings, &mut rng)?;
                let terms = objective::objective_terms(&mut tape, &trace.layers, trace.probs, &bound, g.labels(), &groups)?;
                objective::total_loss(&mut tape, &terms, config.mu, config.lambda)?
            }
            Mode::Base => {
                let probs = base_model_forward(&mut tape, &ops, g.features(), &bound, &settings, &mut rng)?;
                let l1 = objective::classification_loss(&mut tape, probs, g.labels(), &groups.train)?;
                let omega_weights: Vec<_> = bound
                    .entries()
                    .into_iter()
                    .zip(&trainable)
                    .filter(|((_, role, _), &t)| t && *role == crate::params::Role::Weight)
                    .map(|((_, _, v), _)| *v)
                    .collect();
                let omega_reg = objective::weight_regularizer(&mut tape, &omega_weights)?;
                let zero = tape.constant(Tensor::scalar(0.0));
                let terms = LossTerms {
                    l1,
                    l2: zero,
                    l3: zero,
                    l4: zero,
                    omega_reg,
                };
                objective::total_loss(&mut tape, &terms, 0.0, config.lambda)?
            }
        };
        if !breakdown.total.is_finite() {
            return Err(Error::Divergence {
                epoch,
                detail: format!(
                    "loss terms L1={} L2={} L3={} L4={} reg={}",
                    breakdown.l1, breakdown.l2, breakdown.l3, breakdown.l4, breakdown.omega_reg
                ),
            });
        }
        tape.backward(loss)?;
        {
            let handles: Vec<_> = bound.entries().into_iter().map(|(_, _, v)| *v).collect();
            let mut values: Vec<&mut Tensor> = Vec::new();
            let mut grads: Vec<Option<&Tensor>> = Vec::new();
            for ((value, handle), &t) in params.values_mut().into_iter().zip(handles).zip(&trainable) {
                if t {
                    values.push(value);
                    grads.push(tape.grad(handle));
                }
            }
            opt.step(&mut values, &grads)?;
        }

        let preds = match mode {
            Mode::Fair => argmax_rows(&predict_probs_with(&params, g, &ops, config)?),
            Mode::Base => {
                let mut tape = Tape::new();
                let bound = params.bind_constants(&mut tape);
                let probs = base_model_forward(&mut tape, &ops, g.features(), &bound, &ForwardSettings::eval(0.0), &mut rng)?;
                argmax_rows(tape.value(probs))
            }
        };
        let train_acc = accuracy_on(&preds, g.labels(), &split.train);
        let val_acc = accuracy_on(&preds, g.labels(), select_idx);
        debug!(
            "epoch {epoch}: loss {:.6} train acc {train_acc:.4} val acc {val_acc:.4}",
            breakdown.total
        );
        history.losses.push(breakdown);
        history.train_accuracy.push(train_acc);
        history.val_accuracy.push(val_acc);

        if best.as_ref().is_none_or(|(acc, _)| val_acc > *acc) {
            best = Some((val_acc, params.clone()));
            history.best_epoch = epoch;
        } else if epoch - history.best_epoch >= config.patience {
            info!("early stop at epoch {epoch}, best epoch {}", history.best_epoch);
            break;
        }
    }
    let (_, best_params) = best.expect("at least one epoch");
    Ok((best_params, history))
}
