//! Undirected graphs in CSR form, generalized degrees, local contexts and the
//! degree-group partitions used for training and evaluation.

use std::collections::VecDeque;
use std::fs;
use std::path::Path;

use log::warn;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par;
use crate::tensor::Tensor;

/// An immutable undirected simple graph with node features and class labels.
///
/// Each undirected edge is stored in both endpoint rows; rows are sorted and
/// contain neither self-loops nor duplicates.
#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    offsets: Vec<usize>,
    neighbors: Vec<usize>,
    features: Tensor,
    labels: Vec<usize>,
    num_classes: usize,
}

impl Graph {
    /// Builds a graph from an undirected edge list. Edges are symmetrized,
    /// self-loops are dropped and duplicates collapsed.
    pub fn from_edges(
        edges: &[(usize, usize)],
        features: Tensor,
        labels: Vec<usize>,
        num_classes: usize,
    ) -> Result<Self> {
        let n = features.rows();
        if labels.len() != n {
            return Err(Error::Consistency(format!(
                "{} labels for {n} feature rows",
                labels.len()
            )));
        }
        if let Some((v, &y)) = labels.iter().enumerate().find(|(_, &y)| y >= num_classes) {
            return Err(Error::Consistency(format!(
                "label {y} of node {v} is not below num_classes {num_classes}"
            )));
        }
        let mut rows: Vec<Vec<usize>> = vec![Vec::new(); n];
        for &(a, b) in edges {
            if a >= n || b >= n {
                return Err(Error::Consistency(format!(
                    "edge ({a}, {b}) references a node id >= {n}"
                )));
            }
            if a == b {
                continue;
            }
            rows[a].push(b);
            rows[b].push(a);
        }
        let mut offsets = Vec::with_capacity(n + 1);
        offsets.push(0);
        let mut neighbors = Vec::new();
        for row in &mut rows {
            row.sort_unstable();
            row.dedup();
            neighbors.extend_from_slice(row);
            offsets.push(neighbors.len());
        }
        Ok(Graph {
            offsets,
            neighbors,
            features,
            labels,
            num_classes,
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn num_edges(&self) -> usize {
        self.neighbors.len() / 2
    }

    pub fn neighbors(&self, v: usize) -> &[usize] {
        &self.neighbors[self.offsets[v]..self.offsets[v + 1]]
    }

    pub fn degree(&self, v: usize) -> usize {
        self.offsets[v + 1] - self.offsets[v]
    }

    pub fn csr_offsets(&self) -> &[usize] {
        &self.offsets
    }

    pub fn csr_neighbors(&self) -> &[usize] {
        &self.neighbors
    }

    pub fn features(&self) -> &Tensor {
        &self.features
    }

    pub fn feature_dim(&self) -> usize {
        self.features.cols()
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    /// Each undirected edge once, as `(low, high)`.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.num_nodes())
            .flat_map(move |v| self.neighbors(v).iter().map(move |&u| (v, u)))
            .filter(|(v, u)| v < u)
    }

    /// One-hop degrees as fp64.
    pub fn degrees(&self) -> Vec<f64> {
        (0..self.num_nodes()).map(|v| self.degree(v) as f64).collect()
    }

    /// `y = A·x`.
    pub fn adjacency_matvec(&self, x: &[f64]) -> Vec<f64> {
        par::map_indices(self.num_nodes(), |v| self.row_dot(v, x))
    }

    pub fn adjacency_matvec_seq(&self, x: &[f64]) -> Vec<f64> {
        (0..self.num_nodes()).map(|v| self.row_dot(v, x)).collect()
    }

    #[cfg(feature = "parallel")]
    pub fn adjacency_matvec_par(&self, x: &[f64]) -> Vec<f64> {
        use rayon::prelude::*;
        (0..self.num_nodes())
            .into_par_iter()
            .map(|v| self.row_dot(v, x))
            .collect()
    }

    #[inline]
    fn row_dot(&self, v: usize, x: &[f64]) -> f64 {
        self.neighbors(v).iter().map(|&u| x[u]).sum()
    }
}

/// Number of length-`r` walks starting at each node, `A^r·1`.
///
/// Walk counts are exact while they stay below 2^53.
pub fn generalized_degree(g: &Graph, r: usize) -> Result<Vec<f64>> {
    if r == 0 {
        return Err(Error::arg("hop count r must be >= 1"));
    }
    let mut x = vec![1.0; g.num_nodes()];
    for _ in 0..r {
        x = g.adjacency_matvec(&x);
    }
    Ok(x)
}

/// All nodes within shortest-path distance `r` of `v`, including `v`, sorted.
pub fn local_context(g: &Graph, v: usize, r: usize) -> Vec<usize> {
    let mut dist = vec![usize::MAX; g.num_nodes()];
    let mut out = vec![v];
    let mut queue = VecDeque::from([v]);
    dist[v] = 0;
    while let Some(u) = queue.pop_front() {
        if dist[u] == r {
            continue;
        }
        for &w in g.neighbors(u) {
            if dist[w] == usize::MAX {
                dist[w] = dist[u] + 1;
                out.push(w);
                queue.push_back(w);
            }
        }
    }
    out.sort_unstable();
    out
}

/// `local_context` for every node.
pub fn local_contexts(g: &Graph, r: usize) -> Vec<Vec<usize>> {
    par::map_indices(g.num_nodes(), |v| local_context(g, v, r))
}

/// Arithmetic mean one-hop degree, `2|E| / |V|`.
pub fn mean_degree(g: &Graph) -> Result<f64> {
    if g.num_nodes() == 0 {
        return Err(Error::arg("mean degree of an empty graph"));
    }
    Ok(2.0 * g.num_edges() as f64 / g.num_nodes() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum PartitionKind {
    /// `S0 = {deg <= k}`, `S1` = the rest.
    ThresholdContrast { k: f64 },
    /// Bottom / top `fraction` of the universe by degree.
    TopBottomFraction { fraction: f64 },
    /// `G_i = {d_i <= deg < d_{i+1}}`.
    BoundaryList { boundaries: Vec<f64> },
}

/// Disjoint degree groups over some node universe. Groups are sorted by node id.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupAssignment {
    pub kind: PartitionKind,
    pub groups: Vec<Vec<usize>>,
}

impl GroupAssignment {
    /// Low-degree group (`S0` / `G0`).
    pub fn low(&self) -> &[usize] {
        &self.groups[0]
    }

    /// High-degree group (`S1` / `G1`).
    pub fn high(&self) -> &[usize] {
        &self.groups[self.groups.len() - 1]
    }

    /// Membership mask for group `i` over `n` nodes.
    pub fn mask(&self, i: usize, n: usize) -> Vec<bool> {
        let mut m = vec![false; n];
        for &v in &self.groups[i] {
            m[v] = true;
        }
        m
    }
}

/// Splits `universe` into low (`deg <= k`) and high degree groups.
pub fn partition_contrast(degrees: &[f64], k: f64, universe: &[usize]) -> GroupAssignment {
    let (mut low, mut high): (Vec<usize>, Vec<usize>) =
        universe.iter().partition(|&&v| degrees[v] <= k);
    low.sort_unstable();
    high.sort_unstable();
    if low.is_empty() || high.is_empty() {
        warn!(
            "degree threshold {k} leaves a contrast group empty ({} low, {} high)",
            low.len(),
            high.len()
        );
    }
    GroupAssignment {
        kind: PartitionKind::ThresholdContrast { k },
        groups: vec![low, high],
    }
}

/// Bottom and top `fraction` of `universe` by degree; ties broken by node id.
pub fn partition_top_bottom(
    degrees: &[f64],
    fraction: f64,
    universe: &[usize],
) -> Result<GroupAssignment> {
    if !(fraction > 0.0 && fraction <= 0.5) {
        return Err(Error::arg(format!("fraction {fraction} outside (0, 0.5]")));
    }
    if universe.len() < 2 {
        return Err(Error::arg("top/bottom partition needs at least two nodes"));
    }
    let size = (fraction * universe.len() as f64 + 1e-9).floor() as usize;
    if size == 0 {
        return Err(Error::arg(format!(
            "fraction {fraction} of {} nodes selects no node",
            universe.len()
        )));
    }
    let mut order = universe.to_vec();
    order.sort_by(|&a, &b| degrees[a].total_cmp(&degrees[b]).then(a.cmp(&b)));
    let mut low = order[..size].to_vec();
    let mut high = order[order.len() - size..].to_vec();
    low.sort_unstable();
    high.sort_unstable();
    Ok(GroupAssignment {
        kind: PartitionKind::TopBottomFraction { fraction },
        groups: vec![low, high],
    })
}

/// Groups by strictly increasing boundaries `d_1 < ... < d_{m+1}`; nodes
/// outside `[d_1, d_{m+1})` belong to no group.
pub fn partition_boundaries(
    degrees: &[f64],
    boundaries: &[f64],
    universe: &[usize],
) -> Result<GroupAssignment> {
    if boundaries.len() < 2 || boundaries.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::arg(
            "boundaries must be at least two strictly increasing values",
        ));
    }
    let mut groups = vec![Vec::new(); boundaries.len() - 1];
    for &v in universe {
        let d = degrees[v];
        if let Some(i) = boundaries.windows(2).position(|w| w[0] <= d && d < w[1]) {
            groups[i].push(v);
        }
    }
    groups.iter_mut().for_each(|g| g.sort_unstable());
    Ok(GroupAssignment {
        kind: PartitionKind::BoundaryList {
            boundaries: boundaries.to_vec(),
        },
        groups,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct NodeSplit {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
    pub seed: u64,
}

/// Seeded shuffle then contiguous train/val/test assignment. Validation and
/// test sizes are floored; the remainder goes to training.
pub fn split_nodes(num_nodes: usize, ratios: (f64, f64, f64), seed: u64) -> Result<NodeSplit> {
    let (tr, va, te) = ratios;
    if tr <= 0.0 || va <= 0.0 || te <= 0.0 || ((tr + va + te) - 1.0).abs() > 1e-9 {
        return Err(Error::arg(format!(
            "split ratios ({tr}, {va}, {te}) must be positive and sum to 1"
        )));
    }
    let n_val = (va * num_nodes as f64 + 1e-9).floor() as usize;
    let n_test = (te * num_nodes as f64 + 1e-9).floor() as usize;
    let n_train = num_nodes - n_val - n_test;

    let mut perm: Vec<usize> = (0..num_nodes).collect();
    perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let sorted = |s: &[usize]| {
        let mut v = s.to_vec();
        v.sort_unstable();
        v
    };
    Ok(NodeSplit {
        train: sorted(&perm[..n_train]),
        val: sorted(&perm[n_train..n_train + n_val]),
        test: sorted(&perm[n_train + n_val..]),
        seed,
    })
}

/// Loads a graph from the edge, feature and label text formats.
///
/// The node count is the number of feature rows; the class count is one more
/// than the largest label.
pub fn load_graph(edge_path: &Path, feature_path: &Path, label_path: &Path) -> Result<Graph> {
    let features = read_features(feature_path)?;
    let labels = read_labels(label_path)?;
    let edges = read_edges(edge_path)?;
    let num_classes = labels.iter().max().map_or(1, |&m| m + 1);
    Graph::from_edges(&edges, features, labels, num_classes)
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        msg: msg.into(),
    }
}

/// Tab-separated edge list; `#` lines and blank lines are skipped.
pub fn read_edges(path: &Path) -> Result<Vec<(usize, usize)>> {
    let text = read_text(path)?;
    let mut edges = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut fields = line.split('\t');
        let (Some(a), Some(b), None) = (fields.next(), fields.next(), fields.next()) else {
            return Err(parse_err(path, i + 1, "expected two tab-separated node ids"));
        };
        let id = |s: &str| {
            s.parse::<usize>()
                .map_err(|_| parse_err(path, i + 1, format!("invalid node id {s:?}")))
        };
        edges.push((id(a)?, id(b)?));
    }
    Ok(edges)
}

pub fn read_features(path: &Path) -> Result<Tensor> {
    let text = read_text(path)?;
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.is_empty() {
            continue;
        }
        let row = line
            .split(',')
            .map(|s| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|_| parse_err(path, i + 1, format!("invalid feature value {s:?}")))
            })
            .collect::<Result<Vec<f64>>>()?;
        if let Some(first) = rows.first() {
            let first: &Vec<f64> = first;
            if first.len() != row.len() {
                return Err(parse_err(
                    path,
                    i + 1,
                    format!("expected {} fields, found {}", first.len(), row.len()),
                ));
            }
        }
        rows.push(row);
    }
    Tensor::from_rows(&rows)
}

/// One non-negative integer per line.
pub fn read_labels(path: &Path) -> Result<Vec<usize>> {
    read_index_lines(path)
}

pub(crate) fn read_index_lines(path: &Path) -> Result<Vec<usize>> {
    let text = read_text(path)?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            l.trim()
                .parse::<usize>()
                .map_err(|_| parse_err(path, i + 1, format!("invalid class index {l:?}")))
        })
        .collect()
}

/// Writes the three data files in the formats `load_graph` reads.
pub fn write_graph(g: &Graph, edge_path: &Path, feature_path: &Path, label_path: &Path) -> Result<()> {
    let mut edges = String::new();
    for (a, b) in g.edges() {
        edges.push_str(&format!("{a}\t{b}\n"));
    }
    let mut feats = String::new();
    for v in 0..g.num_nodes() {
        let row: Vec<String> = g.features().row(v).iter().map(|x| format!("{x:?}")).collect();
        feats.push_str(&row.join(","));
        feats.push('\n');
    }
    let labels: String = g.labels().iter().map(|y| format!("{y}\n")).collect();
    for (path, body) in [(edge_path, edges), (feature_path, feats), (label_path, labels)] {
        fs::write(path, body).map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}
