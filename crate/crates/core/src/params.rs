//! Learnable parameters, generic over the stored value so the same layout
//! serves owned tensors (`ModelParams`) and tape handles (`Params<Var>`).

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BaseKind {
    Gcn,
    Sage,
    Gat,
}

impl BaseKind {
    pub fn name(self) -> &'static str {
        match self {
            BaseKind::Gcn => "gcn",
            BaseKind::Sage => "sage",
            BaseKind::Gat => "gat",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Weight,
    Bias,
}

/// Fully connected map `x·weight + bias`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense<T> {
    pub weight: T,
    pub bias: T,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionHead<T> {
    pub weight: T,
    /// `d_out × 1`, scores the neighbor side.
    pub att_src: T,
    /// `d_out × 1`, scores the target side.
    pub att_dst: T,
}

#[derive(Debug, Clone, PartialEq)]
pub enum BaseWeights<T> {
    Gcn { weight: T },
    Sage { self_weight: T, neigh_weight: T },
    Gat { heads: Vec<AttentionHead<T>> },
}

/// One layer: base aggregator weights plus the debiasing function's
/// group-specific context maps and the shared FiLM generators.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams<T> {
    pub omega: BaseWeights<T>,
    pub theta_c0: Dense<T>,
    pub theta_c1: Dense<T>,
    pub theta_gamma: Dense<T>,
    pub theta_beta: Dense<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Params<T> {
    pub layers: Vec<LayerParams<T>>,
}

pub type ModelParams = Params<Tensor>;

/// Layer widths and aggregator settings that fix every parameter shape.
#[derive(Debug, Clone, PartialEq)]
pub struct Architecture {
    pub kind: BaseKind,
    /// `d_0` (input features) through `d_ℓ` (classes).
    pub dims: Vec<usize>,
    pub gat_heads: usize,
}

impl Architecture {
    pub fn num_layers(&self) -> usize {
        self.dims.len() - 1
    }

    pub fn validate(&self) -> Result<()> {
        if self.dims.len() < 2 || self.dims.contains(&0) {
            return Err(Error::Config(format!("invalid layer widths {:?}", self.dims)));
        }
        if self.kind == BaseKind::Gat && self.gat_heads == 0 {
            return Err(Error::Config("gat_heads must be >= 1".into()));
        }
        Ok(())
    }
}

/// Width of the degree encoding feeding layer `l`'s FiLM generators: `d_l`
/// rounded up to even.
pub fn encoding_width(d_l: usize) -> usize {
    d_l + d_l % 2
}

impl<T> Dense<T> {
    fn visit<'a>(&'a self, name: &str, out: &mut Vec<(String, Role, &'a T)>) {
        out.push((format!("{name}.weight"), Role::Weight, &self.weight));
        out.push((format!("{name}.bias"), Role::Bias, &self.bias));
    }

    fn visit_mut<'a>(&'a mut self, out: &mut Vec<&'a mut T>) {
        out.push(&mut self.weight);
        out.push(&mut self.bias);
    }

    fn map<U, F: FnMut(&str, Role, &T) -> U>(&self, name: &str, f: &mut F) -> Dense<U> {
        Dense {
            weight: f(&format!("{name}.weight"), Role::Weight, &self.weight),
            bias: f(&format!("{name}.bias"), Role::Bias, &self.bias),
        }
    }
}

impl<T> BaseWeights<T> {
    fn visit<'a>(&'a self, p: &str, out: &mut Vec<(String, Role, &'a T)>) {
        match self {
            BaseWeights::Gcn { weight } => out.push((format!("{p}.weight"), Role::Weight, weight)),
            BaseWeights::Sage {
                self_weight,
                neigh_weight,
            } => {
                out.push((format!("{p}.self_weight"), Role::Weight, self_weight));
                out.push((format!("{p}.neigh_weight"), Role::Weight, neigh_weight));
            }
            BaseWeights::Gat { heads } => {
                for (h, head) in heads.iter().enumerate() {
                    out.push((format!("{p}.head{h}.weight"), Role::Weight, &head.weight));
                    out.push((format!("{p}.head{h}.att_src"), Role::Weight, &head.att_src));
                    out.push((format!("{p}.head{h}.att_dst"), Role::Weight, &head.att_dst));
                }
            }
        }
    }

    fn visit_mut<'a>(&'a mut self, out: &mut Vec<&'a mut T>) {
        match self {
            BaseWeights::Gcn { weight } => out.push(weight),
            BaseWeights::Sage {
                self_weight,
                neigh_weight,
            } => {
                out.push(self_weight);
                out.push(neigh_weight);
            }
            BaseWeights::Gat { heads } => {
                for head in heads {
                    out.push(&mut head.weight);
                    out.push(&mut head.att_src);
                    out.push(&mut head.att_dst);
                }
            }
        }
    }

    fn map<U, F: FnMut(&str, Role, &T) -> U>(&self, p: &str, f: &mut F) -> BaseWeights<U> {
        match self {
            BaseWeights::Gcn { weight } => BaseWeights::Gcn {
                weight: f(&format!("{p}.weight"), Role::Weight, weight),
            },
            BaseWeights::Sage {
                self_weight,
                neigh_weight,
            } => BaseWeights::Sage {
                self_weight: f(&format!("{p}.self_weight"), Role::Weight, self_weight),
                neigh_weight: f(&format!("{p}.neigh_weight"), Role::Weight, neigh_weight),
            },
            BaseWeights::Gat { heads } => BaseWeights::Gat {
                heads: heads
                    .iter()
                    .enumerate()
                    .map(|(h, head)| AttentionHead {
                        weight: f(&format!("{p}.head{h}.weight"), Role::Weight, &head.weight),
                        att_src: f(&format!("{p}.head{h}.att_src"), Role::Weight, &head.att_src),
                        att_dst: f(&format!("{p}.head{h}.att_dst"), Role::Weight, &head.att_dst),
                    })
                    .collect(),
            },
        }
    }
}

impl<T> LayerParams<T> {
    fn visit<'a>(&'a self, p: &str, out: &mut Vec<(String, Role, &'a T)>) {
        self.omega.visit(&format!("{p}.omega"), out);
        self.theta_c0.visit(&format!("{p}.theta_c0"), out);
        self.theta_c1.visit(&format!("{p}.theta_c1"), out);
        self.theta_gamma.visit(&format!("{p}.theta_gamma"), out);
        self.theta_beta.visit(&format!("{p}.theta_beta"), out);
    }

    fn visit_mut<'a>(&'a mut self, out: &mut Vec<&'a mut T>) {
        self.omega.visit_mut(out);
        self.theta_c0.visit_mut(out);
        self.theta_c1.visit_mut(out);
        self.theta_gamma.visit_mut(out);
        self.theta_beta.visit_mut(out);
    }

    fn map<U, F: FnMut(&str, Role, &T) -> U>(&self, p: &str, f: &mut F) -> LayerParams<U> {
        LayerParams {
            omega: self.omega.map(&format!("{p}.omega"), f),
            theta_c0: self.theta_c0.map(&format!("{p}.theta_c0"), f),
            theta_c1: self.theta_c1.map(&format!("{p}.theta_c1"), f),
            theta_gamma: self.theta_gamma.map(&format!("{p}.theta_gamma"), f),
            theta_beta: self.theta_beta.map(&format!("{p}.theta_beta"), f),
        }
    }
}

impl<T> Params<T> {
    /// Every parameter with its canonical name, in a fixed order.
    pub fn entries(&self) -> Vec<(String, Role, &T)> {
        let mut out = Vec::new();
        for (l, layer) in self.layers.iter().enumerate() {
            layer.visit(&format!("layer{l}"), &mut out);
        }
        out
    }

    /// Mutable references in the same order as [`Params::entries`].
    pub fn values_mut(&mut self) -> Vec<&mut T> {
        let mut out = Vec::new();
        for layer in &mut self.layers {
            layer.visit_mut(&mut out);
        }
        out
    }

    pub fn map<U, F: FnMut(&str, Role, &T) -> U>(&self, mut f: F) -> Params<U> {
        Params {
            layers: self
                .layers
                .iter()
                .enumerate()
                .map(|(l, layer)| layer.map(&format!("layer{l}"), &mut f))
                .collect(),
        }
    }
}

impl ModelParams {
    /// All-zero parameters with the shapes `arch` requires.
    pub fn zeros(arch: &Architecture) -> Result<Self> {
        arch.validate()?;
        let dense = |i: usize, o: usize| Dense {
            weight: Tensor::zeros(i, o),
            bias: Tensor::zeros(1, o),
        };
        let layers = arch
            .dims
            .windows(2)
            .map(|w| {
                let (d_in, d_out) = (w[0], w[1]);
                let enc = encoding_width(d_out);
                let omega = match arch.kind {
                    BaseKind::Gcn => BaseWeights::Gcn {
                        weight: Tensor::zeros(d_in, d_out),
                    },
                    BaseKind::Sage => BaseWeights::Sage {
                        self_weight: Tensor::zeros(d_in, d_out),
                        neigh_weight: Tensor::zeros(d_in, d_out),
                    },
                    BaseKind::Gat => BaseWeights::Gat {
                        heads: (0..arch.gat_heads)
                            .map(|_| AttentionHead {
                                weight: Tensor::zeros(d_in, d_out),
                                att_src: Tensor::zeros(d_out, 1),
                                att_dst: Tensor::zeros(d_out, 1),
                            })
                            .collect(),
                    },
                };
                LayerParams {
                    omega,
                    theta_c0: dense(d_in, d_out),
                    theta_c1: dense(d_in, d_out),
                    theta_gamma: dense(enc, d_out),
                    theta_beta: dense(enc, d_out),
                }
            })
            .collect();
        Ok(Params { layers })
    }

    /// Glorot-uniform weights with bound `sqrt(6 / (fan_in + fan_out))`, zero biases.
    pub fn glorot<R: Rng + ?Sized>(arch: &Architecture, rng: &mut R) -> Result<Self> {
        let zeros = Self::zeros(arch)?;
        Ok(zeros.map(|_, role, t| match role {
            Role::Bias => t.clone(),
            Role::Weight => {
                let bound = (6.0 / (t.rows() + t.cols()) as f64).sqrt();
                let data = (0..t.len()).map(|_| rng.random_range(-bound..=bound)).collect();
                Tensor::from_vec(t.rows(), t.cols(), data).expect("shape preserved")
            }
        }))
    }

    /// Records every tensor as a gradient-requiring leaf.
    pub fn bind(&self, tape: &mut Tape) -> Params<Var> {
        self.map(|_, _, t| tape.param(t.clone()))
    }

    /// Records every tensor as a constant (no gradients).
    pub fn bind_constants(&self, tape: &mut Tape) -> Params<Var> {
        self.map(|_, _, t| tape.constant(t.clone()))
    }

    pub fn num_scalars(&self) -> usize {
        self.entries().iter().map(|(_, _, t)| t.len()).sum()
    }
}
