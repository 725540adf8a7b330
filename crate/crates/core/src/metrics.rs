//! Accuracy, ΔDSP and ΔDEO over low/high degree groups, and multi-run summaries.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::partition_top_bottom;

pub fn accuracy(preds: &[usize], labels: &[usize], idx: &[usize]) -> Result<f64> {
    if idx.is_empty() {
        return Err(Error::arg("accuracy over an empty node set"));
    }
    let hits = idx.iter().filter(|&&v| preds[v] == labels[v]).count();
    Ok(hits as f64 / idx.len() as f64)
}

fn check_groups(g0: &[usize], g1: &[usize]) -> Result<()> {
    if g0.is_empty() || g1.is_empty() {
        return Err(Error::arg("fairness metric needs two nonempty groups"));
    }
    let mut members: Vec<usize> = g0.iter().chain(g1).copied().collect();
    members.sort_unstable();
    if members.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::arg("groups must be disjoint"));
    }
    Ok(())
}

fn class_index(y: usize, num_classes: usize) -> Result<usize> {
    if y >= num_classes {
        return Err(Error::arg(format!("class {y} out of range for {num_classes} classes")));
    }
    Ok(y)
}

/// `P(ŷ = y | G)` for every class.
fn prediction_distribution(preds: &[usize], group: &[usize], num_classes: usize) -> Result<Vec<f64>> {
    let mut counts = vec![0usize; num_classes];
    for &v in group {
        counts[class_index(preds[v], num_classes)?] += 1;
    }
    Ok(counts.iter().map(|&c| c as f64 / group.len() as f64).collect())
}

/// `P(ŷ = y | y_v = y, G)` per class; `None` where the group has no member of class `y`.
fn recall_per_class(preds: &[usize], labels: &[usize], group: &[usize], num_classes: usize) -> Result<Vec<Option<f64>>> {
    let mut hits = vec![0usize; num_classes];
    let mut totals = vec![0usize; num_classes];
    for &v in group {
        let y = class_index(labels[v], num_classes)?;
        class_index(preds[v], num_classes)?;
        totals[y] += 1;
        if preds[v] == y {
            hits[y] += 1;
        }
    }
    Ok(hits
        .iter()
        .zip(&totals)
        .map(|(&h, &t)| (t > 0).then(|| h as f64 / t as f64))
        .collect())
}

pub fn delta_dsp(preds: &[usize], g0: &[usize], g1: &[usize], num_classes: usize) -> Result<f64> {
    check_groups(g0, g1)?;
    let p0 = prediction_distribution(preds, g0, num_classes)?;
    let p1 = prediction_distribution(preds, g1, num_classes)?;
    let total: f64 = p0.iter().zip(&p1).map(|(a, b)| (a - b).abs()).sum();
    Ok(total / num_classes as f64)
}

/// Classes without a true member in either group are left out of the mean.
pub fn delta_deo(preds: &[usize], labels: &[usize], g0: &[usize], g1: &[usize], num_classes: usize) -> Result<f64> {
    check_groups(g0, g1)?;
    let r0 = recall_per_class(preds, labels, g0, num_classes)?;
    let r1 = recall_per_class(preds, labels, g1, num_classes)?;
    let gaps: Vec<f64> = r0
        .iter()
        .zip(&r1)
        .filter_map(|(a, b)| Some((a.as_ref()? - b.as_ref()?).abs()))
        .collect();
    if gaps.is_empty() {
        return Err(Error::arg("no class has true members in both groups"));
    }
    Ok(gaps.iter().sum::<f64>() / gaps.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassRow {
    pub class: usize,
    pub pred_rate_g0: f64,
    pub pred_rate_g1: f64,
    pub recall_g0: Option<f64>,
    pub recall_g1: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FairnessReport {
    pub accuracy: f64,
    pub delta_dsp: f64,
    pub delta_deo: f64,
    pub per_class: Vec<ClassRow>,
    pub group_sizes: (usize, usize),
    pub r_eval: usize,
    pub fraction: f64,
}

/// Metrics over `test_idx`, with `G0`/`G1` the bottom/top `fraction` of the
/// test nodes by `degrees_r`.
pub fn build_report(
    preds: &[usize],
    labels: &[usize],
    num_classes: usize,
    test_idx: &[usize],
    degrees_r: &[f64],
    r_eval: usize,
    fraction: f64,
) -> Result<FairnessReport> {
    if preds.len() != labels.len() || degrees_r.len() != labels.len() {
        return Err(Error::arg(format!(
            "{} predictions, {} labels and {} degrees",
            preds.len(),
            labels.len(),
            degrees_r.len()
        )));
    }
    let groups = partition_top_bottom(degrees_r, fraction, test_idx)?;
    let (g0, g1) = (groups.low(), groups.high());
    let p0 = prediction_distribution(preds, g0, num_classes)?;
    let p1 = prediction_distribution(preds, g1, num_classes)?;
    let r0 = recall_per_class(preds, labels, g0, num_classes)?;
    let r1 = recall_per_class(preds, labels, g1, num_classes)?;
    let per_class = (0..num_classes)
        .map(|y| ClassRow {
            class: y,
            pred_rate_g0: p0[y],
            pred_rate_g1: p1[y],
            recall_g0: r0[y],
            recall_g1: r1[y],
        })
        .collect();
    Ok(FairnessReport {
        accuracy: accuracy(preds, labels, test_idx)?,
        delta_dsp: delta_dsp(preds, g0, g1, num_classes)?,
        delta_deo: delta_deo(preds, labels, g0, g1, num_classes)?,
        per_class,
        group_sizes: (g0.len(), g1.len()),
        r_eval,
        fraction,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    /// Sample standard deviation; 0 for a single run.
    pub std: f64,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::arg("summary of zero values"));
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() == 1 {
            0.0
        } else {
            (values.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        };
        Ok(MeanStd { mean, std })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunAggregate {
    pub runs: usize,
    pub accuracy: MeanStd,
    pub delta_dsp: MeanStd,
    pub delta_deo: MeanStd,
}

pub fn aggregate_runs(reports: &[FairnessReport]) -> Result<RunAggregate> {
    if reports.is_empty() {
        return Err(Error::arg("aggregate over zero runs"));
    }
    let col = |f: fn(&FairnessReport) -> f64| MeanStd::of(&reports.iter().map(f).collect::<Vec<_>>());
    Ok(RunAggregate {
        runs: reports.len(),
        accuracy: col(|r| r.accuracy)?,
        delta_dsp: col(|r| r.delta_dsp)?,
        delta_deo: col(|r| r.delta_deo)?,
    })
}
