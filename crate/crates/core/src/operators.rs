//! Per-graph constant operators shared by every forward pass.

use std::collections::BTreeMap;
use std::sync::Arc;

use crate::autodiff::AttentionPattern;
use crate::error::{Error, Result};
use crate::graph::{local_contexts, partition_contrast, Graph, GroupAssignment};
use crate::sparse::{CsrMatrix, SparseOperator};
use crate::tensor::Tensor;

/// Normalized adjacency variants, context pooling, attention pattern, degree
/// encodings and structural-contrast masks for one graph.
#[derive(Debug, Clone)]
pub struct GraphOperators {
    pub num_nodes: usize,
    /// `D̃^{-1/2} (A + I) D̃^{-1/2}`.
    pub gcn: Arc<SparseOperator>,
    /// Row-normalized `A`; isolated nodes have an empty row.
    pub neighbor_mean: Arc<SparseOperator>,
    /// Mean over each node's r-hop local context (node included).
    pub context_mean: Arc<SparseOperator>,
    pub attention: Arc<AttentionPattern>,
    /// One-hop degrees.
    pub degrees: Vec<f64>,
    /// Distinct one-hop degrees, ascending.
    pub distinct_degrees: Vec<f64>,
    /// Index into `distinct_degrees` for each node.
    pub degree_slot: Arc<Vec<usize>>,
    pub contrast: GroupAssignment,
    pub s0_mask: Arc<Vec<f64>>,
    pub s1_mask: Arc<Vec<f64>>,
}

impl GraphOperators {
    /// Builds operators with the structural contrast `S0 = {deg_1 <= k}` over all nodes.
    pub fn new(g: &Graph, r_context: usize, k: f64) -> Result<Self> {
        let all: Vec<usize> = (0..g.num_nodes()).collect();
        let contrast = partition_contrast(&g.degrees(), k, &all);
        Self::with_groups(g, r_context, contrast)
    }

    /// `contrast` must be a two-group partition covering every node.
    pub fn with_groups(g: &Graph, r_context: usize, contrast: GroupAssignment) -> Result<Self> {
        let n = g.num_nodes();
        if r_context == 0 {
            return Err(Error::arg("context radius must be >= 1"));
        }
        if contrast.groups.len() != 2 {
            return Err(Error::arg("structural contrast needs exactly two groups"));
        }
        let mut seen = vec![0u8; n];
        for &v in contrast.groups.iter().flatten() {
            if v >= n {
                return Err(Error::arg(format!("group member {v} out of range")));
            }
            seen[v] += 1;
        }
        if seen.iter().any(|&c| c != 1) {
            return Err(Error::arg(
                "structural contrast groups must be disjoint and cover every node",
            ));
        }
        let s0_mask: Vec<f64> = contrast.mask(0, n).into_iter().map(|b| f64::from(u8::from(b))).collect();
        let s1_mask: Vec<f64> = contrast.mask(1, n).into_iter().map(|b| f64::from(u8::from(b))).collect();

        let degrees = g.degrees();
        let with_self = |v: usize| -> Vec<usize> {
            let mut row: Vec<usize> = g.neighbors(v).to_vec();
            let pos = row.partition_point(|&u| u < v);
            row.insert(pos, v);
            row
        };

        let gcn_rows = (0..n)
            .map(|v| {
                let dv = degrees[v] + 1.0;
                with_self(v)
                    .into_iter()
                    .map(|u| (u, 1.0 / (dv * (degrees[u] + 1.0)).sqrt()))
                    .collect()
            })
            .collect();
        let mean_rows = (0..n)
            .map(|v| {
                let nb = g.neighbors(v);
                let w = 1.0 / nb.len().max(1) as f64;
                nb.iter().map(|&u| (u, w)).collect()
            })
            .collect();
        let context_rows = local_contexts(g, r_context)
            .into_iter()
            .map(|ctx| {
                let w = 1.0 / ctx.len() as f64;
                ctx.into_iter().map(|u| (u, w)).collect()
            })
            .collect();
        let attention_rows = (0..n)
            .map(|v| with_self(v).into_iter().map(|u| (u, 1.0)).collect())
            .collect();

        let mut slots = BTreeMap::new();
        for &d in &degrees {
            slots.entry(d as u64).or_insert(0usize);
        }
        for (i, slot) in slots.values_mut().enumerate() {
            *slot = i;
        }
        let distinct_degrees = slots.keys().map(|&d| d as f64).collect();
        let degree_slot = degrees.iter().map(|&d| slots[&(d as u64)]).collect();

        Ok(GraphOperators {
            num_nodes: n,
            gcn: Arc::new(SparseOperator::new(CsrMatrix::from_rows(n, gcn_rows)?)),
            neighbor_mean: Arc::new(SparseOperator::new(CsrMatrix::from_rows(n, mean_rows)?)),
            context_mean: Arc::new(SparseOperator::new(CsrMatrix::from_rows(n, context_rows)?)),
            attention: Arc::new(AttentionPattern::new(CsrMatrix::from_rows(n, attention_rows)?)),
            degrees,
            distinct_degrees,
            degree_slot: Arc::new(degree_slot),
            contrast,
            s0_mask: Arc::new(s0_mask),
            s1_mask: Arc::new(s1_mask),
        })
    }

    /// Degree encodings of the distinct degrees, one row each.
    pub fn encoding_table(&self, width: usize) -> Result<Tensor> {
        let rows = self
            .distinct_degrees
            .iter()
            .map(|&d| crate::layers::degree_encoding(d, width))
            .collect::<Result<Vec<_>>>()?;
        let mut t = Tensor::from_rows(&rows)?;
        if rows.is_empty() {
            t = Tensor::zeros(0, width);
        }
        Ok(t)
    }
}
