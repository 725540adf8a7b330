//! Planted-bias synthetic graphs for desk-scale experiments.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{mean_degree, Graph};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthParams {
    /// Number of nodes.
    pub n: usize,
    /// Edges added per arriving node.
    pub attach: usize,
    /// Probability that a label equals the node's degree-group indicator.
    pub label_bias: f64,
    pub feat_dim: usize,
    pub seed: u64,
}

/// Generates a preferential-attachment graph whose binary labels follow the
/// degree group (`deg > mean` is class 1), each label flipped with probability
/// `1 - label_bias`. Features are the class mean (class means one unit apart)
/// plus standard normal noise.
pub fn synth_generate(p: &SynthParams) -> Result<Graph> {
    if p.attach == 0 {
        return Err(Error::arg("attach must be >= 1"));
    }
    if p.n < p.attach + 1 {
        return Err(Error::arg(format!(
            "n = {} must be at least attach + 1 = {}",
            p.n,
            p.attach + 1
        )));
    }
    if !(0.0..=1.0).contains(&p.label_bias) {
        return Err(Error::arg(format!("label_bias {} outside [0, 1]", p.label_bias)));
    }
    if p.feat_dim == 0 {
        return Err(Error::arg("feat_dim must be >= 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(p.seed);

    let m = p.attach;
    let mut edges = Vec::with_capacity(m * p.n);
    // Every edge endpoint once; uniform sampling from it is degree-proportional.
    let mut endpoints = Vec::with_capacity(2 * m * p.n);
    for a in 0..=m {
        for b in (a + 1)..=m {
            edges.push((a, b));
            endpoints.extend([a, b]);
        }
    }
    let mut targets = Vec::with_capacity(m);
    for v in (m + 1)..p.n {
        targets.clear();
        while targets.len() < m {
            let t = endpoints[rng.random_range(0..endpoints.len())];
            if !targets.contains(&t) {
                targets.push(t);
            }
        }
        for &t in &targets {
            edges.push((t, v));
            endpoints.extend([t, v]);
        }
    }

    let skeleton = Graph::from_edges(&edges, Tensor::zeros(p.n, 1), vec![0; p.n], 1)?;
    let mean = mean_degree(&skeleton)?;
    let labels: Vec<usize> = (0..p.n)
        .map(|v| {
            let indicator = usize::from(skeleton.degree(v) as f64 > mean);
            if rng.random::<f64>() < p.label_bias {
                indicator
            } else {
                1 - indicator
            }
        })
        .collect();

    let shift = 1.0 / (p.feat_dim as f64).sqrt();
    let mut features = Tensor::zeros(p.n, p.feat_dim);
    for (v, &y) in labels.iter().enumerate() {
        for x in features.row_mut(v) {
            let noise: f64 = rng.sample(StandardNormal);
            *x = y as f64 * shift + noise;
        }
    }
    Graph::from_edges(&edges, features, labels, 2)
}
