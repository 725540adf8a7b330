//! Command implementations. Each returns the text it prints so callers and
//! tests can inspect it.

use std::fs;
use std::path::{Path, PathBuf};

use degfair_core::graph::{generalized_degree, load_graph, mean_degree, read_edges, read_labels, split_nodes, write_graph};
use degfair_core::metrics::{aggregate_runs, build_report, FairnessReport, RunAggregate};
use degfair_core::model_io::{load_model, save_model};
use degfair_core::par::map_jobs;
use degfair_core::params::ModelParams;
use degfair_core::synth::{synth_generate, SynthParams};
use degfair_core::trainer::{predict, train, TrainConfig};
use degfair_core::{Graph, Tensor};
use log::info;

use crate::config::{DataSource, Overrides, RunConfigFile, RunPlan};
use crate::error::{CliError, CliResult};
use crate::report::{format_aggregate, format_report};

/// Train/validation/test proportions used for every run.
pub const SPLIT_RATIOS: (f64, f64, f64) = (0.6, 0.2, 0.2);

pub const AGGREGATE_FILE: &str = "aggregate.txt";

pub fn model_file(run: usize) -> String {
    format!("run-{run}.model")
}

pub fn report_file(run: usize) -> String {
    format!("run-{run}.report")
}

fn write(path: &Path, text: &str) -> CliResult<()> {
    fs::write(path, text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn config_context(cfg: &TrainConfig) -> Vec<(&'static str, String)> {
    vec![
        ("seed", cfg.seed.to_string()),
        ("base_gnn", cfg.base_gnn.name().to_string()),
        ("eps", cfg.eps.to_string()),
        ("mu", cfg.mu.to_string()),
        ("lambda", cfg.lambda.to_string()),
    ]
}

fn evaluate(params: &ModelParams, g: &Graph, cfg: &TrainConfig, fraction: f64) -> CliResult<FairnessReport> {
    let classes = params.layers.last().map_or(0, |l| l.theta_c0.weight.cols());
    if g.num_classes() > classes {
        return Err(CliError::Data(format!(
            "labels use {} classes, the model predicts {classes}",
            g.num_classes()
        )));
    }
    let split = split_nodes(g.num_nodes(), SPLIT_RATIOS, cfg.seed)?;
    let preds = predict(params, g, cfg)?;
    let degrees = generalized_degree(g, cfg.r_eval)?;
    Ok(build_report(&preds, g.labels(), classes, &split.test, &degrees, cfg.r_eval, fraction)?)
}

fn load_data(plan: &RunPlan) -> CliResult<Graph> {
    match &plan.data {
        DataSource::Files(d) => load_graph(&d.edges, &d.features, &d.labels).map_err(CliError::data),
        DataSource::Synthetic(p) => synth_generate(p).map_err(CliError::config),
    }
}

pub struct TrainOutcome {
    pub aggregate: RunAggregate,
    pub reports: Vec<FairnessReport>,
    pub out_dir: PathBuf,
}

/// Runs seeds `seed, seed + 1, ...`, one per run, each controlling the data
/// split, initialization and dropout of that run. Writes one model and one
/// report per run plus the aggregate table.
pub fn cmd_train(config_path: &Path, flags: &Overrides) -> CliResult<TrainOutcome> {
    let file = RunConfigFile::load(config_path)?;
    let base_dir = config_path.parent().unwrap_or(Path::new("."));
    let plan = file.resolve(flags, base_dir)?;
    let g = load_data(&plan)?;
    info!(
        "{} nodes, {} edges, {} classes, {} runs",
        g.num_nodes(),
        g.num_edges(),
        g.num_classes(),
        plan.num_runs
    );

    let configs: Vec<TrainConfig> = (0..plan.num_runs)
        .map(|i| TrainConfig {
            seed: plan.train.seed + i as u64,
            ..plan.train.clone()
        })
        .collect();
    let results = map_jobs(configs, |cfg| -> CliResult<_> {
        let split = split_nodes(g.num_nodes(), SPLIT_RATIOS, cfg.seed)?;
        let (params, history) = train(&g, &split, &cfg)?;
        info!(
            "seed {}: {} epochs, best epoch {}",
            cfg.seed,
            history.epochs_run(),
            history.best_epoch
        );
        let report = evaluate(&params, &g, &cfg, plan.fraction)?;
        Ok((cfg, params, report))
    });

    fs::create_dir_all(&plan.out_dir).map_err(|e| CliError::Data(format!("{}: {e}", plan.out_dir.display())))?;
    let mut reports = Vec::with_capacity(plan.num_runs);
    for (i, result) in results.into_iter().enumerate() {
        let (cfg, params, report) = result?;
        save_model(&params, &cfg, &plan.out_dir.join(model_file(i))).map_err(CliError::data)?;
        write(&plan.out_dir.join(report_file(i)), &format_report(&config_context(&cfg), &report))?;
        reports.push(report);
    }
    let aggregate = aggregate_runs(&reports)?;
    let context = [
        ("base_seed", plan.train.seed.to_string()),
        ("base_gnn", plan.train.base_gnn.name().to_string()),
        ("r_eval", plan.train.r_eval.to_string()),
        ("fraction", plan.fraction.to_string()),
    ];
    write(&plan.out_dir.join(AGGREGATE_FILE), &format_aggregate(&context, &aggregate))?;
    Ok(TrainOutcome {
        aggregate,
        reports,
        out_dir: plan.out_dir,
    })
}

pub struct DataFiles<'a> {
    pub edges: &'a Path,
    pub features: &'a Path,
    pub labels: &'a Path,
}

/// Report of a saved model on the test split of the seed it was trained with.
pub fn cmd_eval(model: &Path, data: &DataFiles, r_eval: Option<usize>, fraction: f64) -> CliResult<String> {
    let saved = load_model(model).map_err(CliError::data)?;
    let g = load_graph(data.edges, data.features, data.labels).map_err(CliError::data)?;
    let mut cfg = saved.config;
    if let Some(r) = r_eval {
        if r == 0 {
            return Err(CliError::Config("--r must be >= 1".into()));
        }
        cfg.r_eval = r;
    }
    let report = evaluate(&saved.params, &g, &cfg, fraction)?;
    Ok(format_report(&config_context(&cfg), &report))
}

/// Metrics of a prediction file over all nodes.
pub fn cmd_audit(preds: &Path, edges: &Path, labels: &Path, r: usize, fraction: f64) -> CliResult<String> {
    let labels = read_labels(labels).map_err(CliError::data)?;
    let preds = read_labels(preds).map_err(CliError::data)?;
    if preds.len() != labels.len() {
        return Err(CliError::Data(format!(
            "{} predictions for {} labelled nodes",
            preds.len(),
            labels.len()
        )));
    }
    let n = labels.len();
    let classes = labels.iter().chain(&preds).max().map_or(1, |&m| m + 1);
    let edges = read_edges(edges).map_err(CliError::data)?;
    let g = Graph::from_edges(&edges, Tensor::zeros(n, 1), labels, classes).map_err(CliError::data)?;
    let degrees = generalized_degree(&g, r).map_err(CliError::config)?;
    let all: Vec<usize> = (0..n).collect();
    let report = build_report(&preds, g.labels(), classes, &all, &degrees, r, fraction)?;
    Ok(format_report(&[("nodes", n.to_string())], &report))
}

pub const SYNTH_FILES: [&str; 3] = ["edges.tsv", "features.csv", "labels.txt"];

/// Writes a synthetic graph into `out_dir`.
pub fn cmd_synth(params: &SynthParams, out_dir: &Path) -> CliResult<String> {
    let g = synth_generate(params).map_err(CliError::config)?;
    fs::create_dir_all(out_dir).map_err(|e| CliError::Data(format!("{}: {e}", out_dir.display())))?;
    let [e, f, l] = SYNTH_FILES.map(|name| out_dir.join(name));
    write_graph(&g, &e, &f, &l).map_err(CliError::data)?;
    Ok(format!(
        "nodes={}\nedges={}\nedge_file={}\nfeature_file={}\nlabel_file={}\n",
        g.num_nodes(),
        g.num_edges(),
        e.display(),
        f.display(),
        l.display()
    ))
}

/// Linear interpolation between closest ranks of sorted values.
fn percentile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Summary of generalized degrees. Without a label file the node count is
/// one more than the largest id in the edge list.
pub fn cmd_degree_stats(edges: &Path, r: usize, labels: Option<&Path>) -> CliResult<String> {
    let edge_list = read_edges(edges).map_err(CliError::data)?;
    let n = match labels {
        Some(p) => read_labels(p).map_err(CliError::data)?.len(),
        None => edge_list.iter().map(|&(a, b)| a.max(b) + 1).max().unwrap_or(0),
    };
    if n == 0 {
        return Err(CliError::Data("graph has no nodes".into()));
    }
    let g = Graph::from_edges(&edge_list, Tensor::zeros(n, 1), vec![0; n], 1).map_err(CliError::data)?;
    let mut deg = generalized_degree(&g, r).map_err(CliError::config)?;
    deg.sort_by(f64::total_cmp);
    let mean = deg.iter().sum::<f64>() / n as f64;
    let mut out = format!("nodes={n}\nedges={}\nr={r}\nmin={}\nmean={mean}\n", g.num_edges(), deg[0]);
    for (name, q) in [("p10", 0.1), ("p25", 0.25), ("p50", 0.5), ("p75", 0.75), ("p90", 0.9)] {
        out.push_str(&format!("{name}={}\n", percentile(&deg, q)));
    }
    out.push_str(&format!("max={}\n", deg[n - 1]));
    out.push_str(&format!("default_k={}\n", mean_degree(&g)?));
    Ok(out)
}
