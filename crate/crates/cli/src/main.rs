//! `boilnet` command-line driver: generate → average → extract → train →
//! evaluate, plus a hyperparameter sweep.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use boilnet::average::AvgSpec;
use boilnet::Result;
use clap::{Parser, Subcommand};

use commands::Workspace;
use config::{read_json, PipelineConfig};

#[derive(Debug, Parser)]
#[command(name = "boilnet", version, about = "Synthetic boiling data, averaging and a feedforward wall-boiling surrogate")]
struct Cli {
    /// Pipeline configuration (JSON). Built-in defaults are used without it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the seed the command uses: generation base seed, training seed or
    /// sweep seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Root directory for all inputs and outputs.
    #[arg(long, global = true)]
    workspace: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write one synthetic case per heat flux to `cases/`.
    Generate,
    /// Space-time average every case into `averaged/`.
    Average {
        /// Only these case directories (for example `q600`).
        #[arg(long = "case")]
        cases: Vec<String>,
        /// Spatial window (m).
        #[arg(long)]
        l: Option<f64>,
        /// Temporal window (s).
        #[arg(long)]
        tau: Option<f64>,
    },
    /// Write the near-wall samples of every averaged case to `datasets/<case>.csv`.
    Extract {
        #[arg(long = "case")]
        cases: Vec<String>,
    },
    /// Fit normalization on the training CSVs, train, and save the model.
    Train {
        /// Training CSVs; defaults to those of the configured split.
        #[arg(long = "train")]
        train: Vec<PathBuf>,
        #[arg(long)]
        test: Option<PathBuf>,
        /// Case study 1–4 (test case index among sorted heat fluxes).
        #[arg(long)]
        split: Option<usize>,
        /// Training settings file; defaults to the config's `training` section.
        #[arg(long)]
        hyper: Option<PathBuf>,
        /// Model file; defaults to `models/model.json`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score a model on a test CSV and write the report files.
    Evaluate {
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        test: Option<PathBuf>,
        /// Training CSVs for the least-squares baseline column.
        #[arg(long = "train")]
        train: Vec<PathBuf>,
        #[arg(long)]
        split: Option<usize>,
        /// Report directory; defaults to `reports/<test case>`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Latin hypercube sweep over learning rate, hidden units and batch size.
    Hpsearch {
        /// LHS plan file; defaults to the config's `experiment.lhs`.
        #[arg(long)]
        plan: Option<PathBuf>,
        #[arg(long)]
        split: Option<usize>,
        /// Sweep table; defaults to `sweep.csv`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(path) => read_json::<PipelineConfig>(path)?,
        None => PipelineConfig::default(),
    };
    let ws = Workspace {
        root: cli.workspace.clone().unwrap_or_else(|| cfg.paths.workspace.clone()),
    };
    match cli.command {
        Command::Generate => {
            if let Some(s) = cli.seed {
                cfg.generation.seed = s;
            }
            commands::generate(&cfg, &ws)?;
        }
        Command::Average { cases, l, tau } => {
            let spec = AvgSpec::new(l.unwrap_or(cfg.averaging.l), tau.unwrap_or(cfg.averaging.tau))?;
            commands::average(&ws, &cases, &spec)?;
        }
        Command::Extract { cases } => {
            commands::extract(&ws, &cases)?;
        }
        Command::Train {
            train,
            test,
            split,
            hyper,
            out,
        } => {
            let mut hyper = commands::load_hyper(hyper.as_deref(), &cfg)?;
            if let Some(s) = cli.seed {
                hyper.seed = s;
            }
            let (train, test) = commands::resolve_split(&cfg, &ws, train, test, split)?;
            let out = out.unwrap_or_else(|| ws.models().join("model.json"));
            commands::train_model(&train, &test, &hyper, &out)?;
        }
        Command::Evaluate {
            model,
            test,
            train,
            split,
            out,
        } => {
            let (train, test) = commands::resolve_split(&cfg, &ws, train, test, split)?;
            let model = model.unwrap_or_else(|| ws.models().join("model.json"));
            let out = out.unwrap_or_else(|| {
                let stem = test.file_stem().unwrap_or_default().to_string_lossy().into_owned();
                ws.reports().join(stem)
            });
            commands::evaluate_model(&model, &test, &train, &out)?;
        }
        Command::Hpsearch { plan, split, out } => {
            if let Some(p) = plan {
                cfg.experiment.lhs = read_json(&p)?;
            }
            if let Some(s) = cli.seed {
                cfg.experiment.lhs.seed = s;
            }
            let out = out.unwrap_or_else(|| ws.root.join("sweep.csv"));
            commands::hpsearch(&cfg, &ws, split.unwrap_or(cfg.experiment.split), &out)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = e.to_string().replace('\n', " ");
            eprintln!("error[{}]: {msg}", e.category());
            ExitCode::FAILURE
        }
    }
}
