use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use degfair_cli::commands::{cmd_audit, cmd_degree_stats, cmd_eval, cmd_synth, cmd_train, DataFiles, AGGREGATE_FILE};
use degfair_cli::config::{default_synth, Overrides};
use degfair_cli::error::{exit_code, CliError, CliResult};
use degfair_core::synth::SynthParams;
use degfair_core::trainer::Preset;

/// Degree-fair GNN training and auditing.
///
/// Exit codes: 0 success, 2 configuration error, 3 data error, 4 training divergence.
#[derive(Parser)]
#[command(name = "degfair", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train `runs` models (seeds seed, seed+1, ...) and write models, reports and an aggregate.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        preset: Option<Preset>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        runs: Option<usize>,
        #[arg(long = "r")]
        r_eval: Option<usize>,
        #[arg(long)]
        fraction: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate a saved model on the test split of its seed.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[command(flatten)]
        data: DataArgs,
        #[arg(long = "r")]
        r_eval: Option<usize>,
        #[arg(long, default_value_t = 0.2)]
        fraction: f64,
    },
    /// Fairness metrics of a prediction file over every node.
    Audit {
        #[arg(long)]
        preds: PathBuf,
        #[arg(long)]
        edges: PathBuf,
        #[arg(long)]
        labels: PathBuf,
        #[arg(long = "r", default_value_t = 1)]
        r_eval: usize,
        #[arg(long, default_value_t = 0.2)]
        fraction: f64,
    },
    /// Write a planted-bias synthetic graph.
    Synth {
        #[arg(long)]
        out: PathBuf,
        /// TOML file with n, attach, label_bias, feat_dim and seed.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Generalized-degree statistics of an edge list.
    DegreeStats {
        #[arg(long)]
        edges: PathBuf,
        #[arg(long = "r", default_value_t = 1)]
        r: usize,
        #[arg(long)]
        labels: Option<PathBuf>,
    },
}

#[derive(Args)]
struct DataArgs {
    #[arg(long)]
    edges: PathBuf,
    #[arg(long)]
    features: PathBuf,
    #[arg(long)]
    labels: PathBuf,
}

fn synth_params(config: Option<PathBuf>, seed: Option<u64>) -> CliResult<SynthParams> {
    let mut params = match config {
        Some(path) => {
            let text = std::fs::read_to_string(&path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
            toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?
        }
        None => default_synth(0),
    };
    if let Some(s) = seed {
        params.seed = s;
    }
    Ok(params)
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Train {
            config,
            preset,
            seed,
            runs,
            r_eval,
            fraction,
            out,
        } => {
            let flags = Overrides {
                preset,
                seed,
                runs,
                r_eval,
                fraction,
                out,
            };
            let outcome = cmd_train(&config, &flags)?;
            let path = outcome.out_dir.join(AGGREGATE_FILE);
            let text = std::fs::read_to_string(&path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
            print!("{text}");
        }
        Command::Eval {
            model,
            data,
            r_eval,
            fraction,
        } => {
            let files = DataFiles {
                edges: &data.edges,
                features: &data.features,
                labels: &data.labels,
            };
            print!("{}", cmd_eval(&model, &files, r_eval, fraction)?);
        }
        Command::Audit {
            preds,
            edges,
            labels,
            r_eval,
            fraction,
        } => print!("{}", cmd_audit(&preds, &edges, &labels, r_eval, fraction)?),
        Command::Synth { out, config, seed } => print!("{}", cmd_synth(&synth_params(config, seed)?, &out)?),
        Command::DegreeStats { edges, r, labels } => print!("{}", cmd_degree_stats(&edges, r, labels.as_deref())?),
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    exit_code(run(Cli::parse()))
}
