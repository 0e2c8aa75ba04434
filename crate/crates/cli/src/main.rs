//! `mmarnn`: synthesize corpora, train, predict, score and run ablations.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use mma_core::exec::with_threads;
use mma_core::model::TrainMode;
use mma_core::{Error, Result};

use crate::config::RunConfig;

#[derive(Parser, Debug)]
#[command(name = "mmarnn", version, about = "Rhythm discrimination and episode localization")]
struct Cli {
    /// INI configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides `[run] seed` and every seed derived from it.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Worker threads; 1 runs sequentially, 0 uses every core.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic annotated corpus.
    Synth {
        #[arg(long)]
        count: Option<usize>,
    },
    /// Train a model and the series-label classifier.
    Train {
        #[arg(long)]
        manifest: Option<String>,
        #[arg(long)]
        mode: Option<TrainMode>,
        #[arg(long)]
        epochs: Option<usize>,
        /// Checkpoint to start from.
        #[arg(long)]
        init_from: Option<PathBuf>,
    },
    /// Predict labels and episodes for every record of a manifest.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        manifest: Option<String>,
        /// Restrict to one split (train, val, test) of `--split-file`.
        #[arg(long)]
        split: Option<String>,
        /// Defaults to `split.json` next to the checkpoint.
        #[arg(long)]
        split_file: Option<PathBuf>,
        /// Also write attention and boundary CSVs.
        #[arg(long)]
        dump: bool,
    },
    /// Score predictions against an annotated manifest.
    Score {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        manifest: Option<String>,
        /// Scoring matrix CSV; the built-in default is unverified.
        #[arg(long)]
        matrix: Option<PathBuf>,
        #[arg(long)]
        split: Option<String>,
        #[arg(long, requires = "split")]
        split_file: Option<PathBuf>,
    },
    /// Train, predict and score every cell of the ablation grid.
    Ablate {
        #[arg(long)]
        manifest: Option<String>,
        /// Run only cells matching `knob=value`; repeatable.
        #[arg(long)]
        grid: Vec<String>,
        #[arg(long)]
        matrix: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
    },
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Spec(_) => 2,
        Error::Validation { .. } | Error::Parse { .. } | Error::Stratification(_) => 3,
        Error::NanLoss { .. } | Error::NumericalFault { .. } => 4,
        Error::Checkpoint(_) => 5,
        Error::MissingPrediction { .. } => 6,
        Error::Matrix(_) => 7,
        _ => 1,
    }
}

fn kind(e: &Error) -> &'static str {
    match e {
        Error::Dimension { .. } => "dimension",
        Error::DegenerateMask(_) => "degenerate_mask",
        Error::DegenerateInput(_) => "degenerate_input",
        Error::Label(_) => "label",
        Error::Contract(_) => "contract",
        Error::NumericalFault { .. } => "numerical_fault",
        Error::NanLoss { .. } => "nan_loss",
        Error::Parse { .. } => "parse",
        Error::Validation { .. } => "validation",
        Error::Spec(_) => "config",
        Error::Stratification(_) => "stratification",
        Error::Data(_) => "data",
        Error::MissingPrediction { .. } => "missing_prediction",
        Error::Checkpoint(_) => "checkpoint",
        Error::Matrix(_) => "matrix",
        Error::Io(_) => "io",
        Error::Json(_) => "json",
    }
}

fn split_arg(
    split: &Option<String>,
    file: Option<PathBuf>,
    default_file: Option<PathBuf>,
) -> Result<Option<(PathBuf, String)>> {
    match split {
        None => Ok(None),
        Some(name) => {
            let file = file
                .or(default_file)
                .ok_or_else(|| Error::Spec("`--split` needs `--split-file`".into()))?;
            Ok(Some((file, name.clone())))
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = RunConfig::load(cli.config.as_deref())?;
    if let Some(seed) = cli.seed {
        cfg.set_seed(seed);
    }
    if let Some(t) = cli.threads {
        cfg.run.threads = t;
    }
    let exec = with_threads(cfg.run.threads);
    let out = cli.out;
    let set_manifest = |cfg: &mut RunConfig, m: Option<String>| {
        if let Some(m) = m {
            cfg.run.manifest = m;
        }
    };
    match cli.command {
        Command::Synth { count } => {
            if let Some(c) = count {
                cfg.synth.count = c;
            }
            let stats = commands::synth(&cfg, &out, exec)?;
            print!("{stats}");
        }
        Command::Train {
            manifest,
            mode,
            epochs,
            init_from,
        } => {
            set_manifest(&mut cfg, manifest);
            if let Some(m) = mode {
                cfg.run.mode = m;
            }
            if let Some(e) = epochs {
                cfg.schedule.epochs = e;
            }
            commands::train_cmd(&cfg, &out, init_from.as_deref(), exec)?;
        }
        Command::Predict {
            checkpoint,
            manifest,
            split,
            split_file,
            dump,
        } => {
            set_manifest(&mut cfg, manifest);
            let default_file = checkpoint.parent().map(|d| d.join("split.json"));
            let split = split_arg(&split, split_file, default_file)?;
            let split = split.as_ref().map(|(f, n)| (f.as_path(), n.as_str()));
            commands::predict_cmd(&cfg, &out, &checkpoint, split, dump, exec)?;
        }
        Command::Score {
            pred,
            manifest,
            matrix,
            split,
            split_file,
        } => {
            set_manifest(&mut cfg, manifest);
            let split = split_arg(&split, split_file, None)?;
            let split = split.as_ref().map(|(f, n)| (f.as_path(), n.as_str()));
            let report = commands::score_cmd(&cfg, &out, &pred, matrix.as_deref(), split)?;
            println!(
                "U_r {:.6}  U_e {:.6}  U {:.6}  ({} records)",
                report.u_r_mean,
                report.u_e_mean,
                report.u,
                report.records.len()
            );
        }
        Command::Ablate {
            manifest,
            grid,
            matrix,
            epochs,
        } => {
            set_manifest(&mut cfg, manifest);
            if let Some(e) = epochs {
                cfg.schedule.epochs = e;
            }
            let results = commands::ablate_cmd(&cfg, &out, &grid, matrix.as_deref(), exec)?;
            let bytes = commands::ablation_csv(&results)?;
            print!("{}", String::from_utf8_lossy(&bytes));
            println!("projection trend: {}", commands::trend(&results));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("MMA_LOG", "warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let code = exit_code(&e);
            let line = serde_json::json!({ "error": kind(&e), "exit_code": code, "message": e.to_string() });
            eprintln!("{line}");
            ExitCode::from(code)
        }
    }
}
