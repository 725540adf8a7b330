//! Run configuration files.
//!
//! ```toml
//! preset = "synth"            # optional: chameleon | squirrel | emnlp | synth
//!
//! [data]                      # either [data] or [synth]
//! edges = "edges.tsv"         # relative to the config file
//! features = "features.csv"
//! labels = "labels.txt"
//!
//! [train]                     # any training field; overrides the preset
//! base_gnn = "gcn"
//! seed = 0                    # run i uses seed + i
//!
//! [eval]
//! r_eval = 1
//! fraction = 0.2
//! num_runs = 5
//!
//! [output]
//! dir = "out"
//! ```
//!
//! Without a preset, `hidden_dim`, `eps` and `mu` must be given in `[train]`;
//! the remaining training fields fall back to the shared defaults.

use std::fs;
use std::path::{Path, PathBuf};

use degfair_core::params::BaseKind;
use degfair_core::synth::SynthParams;
use degfair_core::trainer::{Preset, Threshold, TrainConfig};
use serde::Deserialize;

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfigFile {
    pub preset: Option<Preset>,
    pub data: Option<DataPaths>,
    pub synth: Option<SynthParams>,
    #[serde(default)]
    pub train: TrainOverrides,
    #[serde(default)]
    pub eval: EvalSettings,
    #[serde(default)]
    pub output: OutputSettings,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataPaths {
    pub edges: PathBuf,
    pub features: PathBuf,
    pub labels: PathBuf,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainOverrides {
    pub base_gnn: Option<BaseKind>,
    pub hidden_dim: Option<usize>,
    pub num_layers: Option<usize>,
    pub r_context: Option<usize>,
    pub k: Option<Threshold>,
    pub eps: Option<f64>,
    pub mu: Option<f64>,
    pub lambda: Option<f64>,
    pub lr: Option<f64>,
    pub dropout: Option<f64>,
    pub input_dropout: Option<bool>,
    pub epochs: Option<usize>,
    pub patience: Option<usize>,
    pub seed: Option<u64>,
    pub gat_heads: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSettings {
    pub r_eval: usize,
    pub fraction: f64,
    pub num_runs: usize,
}

impl Default for EvalSettings {
    fn default() -> Self {
        EvalSettings {
            r_eval: 1,
            fraction: 0.2,
            num_runs: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSettings {
    pub dir: PathBuf,
}

impl Default for OutputSettings {
    fn default() -> Self {
        OutputSettings { dir: PathBuf::from("out") }
    }
}

/// Flags that override the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub preset: Option<Preset>,
    pub seed: Option<u64>,
    pub runs: Option<usize>,
    pub r_eval: Option<usize>,
    pub fraction: Option<f64>,
    pub out: Option<PathBuf>,
}

pub enum DataSource {
    Files(DataPaths),
    Synthetic(SynthParams),
}

/// Everything one `train` invocation needs.
pub struct RunPlan {
    pub data: DataSource,
    pub train: TrainConfig,
    pub fraction: f64,
    pub num_runs: usize,
    pub out_dir: PathBuf,
}

impl RunConfigFile {
    pub fn parse(text: &str) -> CliResult<Self> {
        toml::from_str(text).map_err(CliError::config)
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    /// Applies preset, file values and flags in that order. Relative data and
    /// output paths are resolved against `base_dir`.
    pub fn resolve(&self, flags: &Overrides, base_dir: &Path) -> CliResult<RunPlan> {
        let o = &self.train;
        let preset = flags.preset.or(self.preset);
        let base_gnn = o.base_gnn.unwrap_or(BaseKind::Gcn);
        let mut cfg = match preset {
            Some(p) => TrainConfig::preset(p, base_gnn),
            None => {
                let missing: Vec<&str> = [("hidden_dim", o.hidden_dim.is_none()), ("eps", o.eps.is_none()), ("mu", o.mu.is_none())]
                    .into_iter()
                    .filter_map(|(k, m)| m.then_some(k))
                    .collect();
                if !missing.is_empty() {
                    return Err(CliError::Config(format!(
                        "no preset given and [train] lacks {}",
                        missing.join(", ")
                    )));
                }
                TrainConfig {
                    base_gnn,
                    ..TrainConfig::default()
                }
            }
        };
        macro_rules! apply {
            ($($f:ident),*) => { $(if let Some(v) = o.$f { cfg.$f = v; })* };
        }
        apply!(hidden_dim, num_layers, r_context, k, eps, mu, lambda, lr, dropout, input_dropout, epochs, patience, seed, gat_heads);
        if let Some(s) = flags.seed {
            cfg.seed = s;
        }
        cfg.r_eval = flags.r_eval.unwrap_or(self.eval.r_eval);
        cfg.validate().map_err(CliError::config)?;

        let fraction = flags.fraction.unwrap_or(self.eval.fraction);
        if !(fraction > 0.0 && fraction <= 0.5) {
            return Err(CliError::Config(format!("fraction {fraction} outside (0, 0.5]")));
        }
        let num_runs = flags.runs.unwrap_or(self.eval.num_runs);
        if num_runs == 0 {
            return Err(CliError::Config("num_runs must be >= 1".into()));
        }
        let data = match (&self.data, &self.synth) {
            (Some(d), None) => DataSource::Files(DataPaths {
                edges: base_dir.join(&d.edges),
                features: base_dir.join(&d.features),
                labels: base_dir.join(&d.labels),
            }),
            (None, Some(s)) => DataSource::Synthetic(*s),
            _ => return Err(CliError::Config("exactly one of [data] and [synth] is required".into())),
        };
        let out_dir = flags.out.clone().unwrap_or_else(|| base_dir.join(&self.output.dir));
        Ok(RunPlan {
            data,
            train: cfg,
            fraction,
            num_runs,
            out_dir,
        })
    }
}

/// Default parameters of the planted-bias synthetic graph.
pub fn default_synth(seed: u64) -> SynthParams {
    SynthParams {
        n: 300,
        attach: 2,
        label_bias: 0.9,
        feat_dim: 8,
        seed,
    }
}
