//! `histopad` — batch front end for the padding + ensemble pipeline.
//!
//! Exit codes: 0 success, 1 validation error (bad config or inputs),
//! 2 runtime failure.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use commands::{cmd_ablate, cmd_evaluate, cmd_predict, cmd_prepare, cmd_train, parse_seed_list};
use config::{parse_selection, Overrides, RunConfig};

#[derive(Parser)]
#[command(
    name = "histopad",
    version,
    about = "Pad-to-max augmentation, jitter class balancing, ensemble training and F1 evaluation",
    after_help = "Pretrained backbone weights are looked up in the directory named by \
                  the HISTOPAD_WEIGHTS_DIR environment variable as <architecture>.hpw."
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct RunArgs {
    /// Run configuration document (TOML)
    #[arg(long)]
    config: PathBuf,
    /// Override the config seed
    #[arg(long)]
    seed: Option<u64>,
    /// Override the output directory
    #[arg(long)]
    out: Option<PathBuf>,
    /// Use only the first N configured backbones
    #[arg(long)]
    members: Option<usize>,
    /// Override the number of training epochs
    #[arg(long)]
    epochs: Option<usize>,
    /// Override the learning rate
    #[arg(long)]
    lr: Option<f64>,
    /// Override the momentum value
    #[arg(long)]
    momentum: Option<f64>,
    /// Checkpoint selection loss: val or train
    #[arg(long)]
    selection: Option<String>,
    /// Comma-separated backbone list replacing the configured ensemble
    #[arg(long)]
    backbones: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Compute corpus statistics and write the balanced-corpus manifest
    Prepare(RunArgs),
    /// Fine-tune the ensemble and save one checkpoint per member
    Train(RunArgs),
    /// Run checkpoints over an image directory and write the submission
    Predict {
        #[command(flatten)]
        run: RunArgs,
        /// Checkpoint files, one per member
        #[arg(long, num_args = 1.., required = true)]
        checkpoints: Vec<PathBuf>,
        /// Input dataset root (expects `<dir>/images/*`)
        #[arg(long)]
        input: PathBuf,
    },
    /// Score a predictions table against a truth table
    Evaluate {
        /// Truth labels table (id,label)
        #[arg(long)]
        truth: PathBuf,
        /// Predictions table (id,... with the label in the last column)
        #[arg(long)]
        predictions: PathBuf,
        /// Where to write report.json
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Compare sizing and model strategies across seeds
    Ablate {
        #[command(flatten)]
        run: RunArgs,
        /// Comma-separated seeds (default: the run seed)
        #[arg(long)]
        seeds: Option<String>,
    },
}

fn overrides_of(args: &RunArgs) -> anyhow::Result<Overrides> {
    Ok(Overrides {
        seed: args.seed,
        out: args.out.clone(),
        members: args.members,
        epochs: args.epochs,
        learning_rate: args.lr,
        momentum: args.momentum,
        selection: args.selection.as_deref().map(parse_selection).transpose()?,
        backbones: args
            .backbones
            .as_deref()
            .map(|list| list.split(',').map(|s| s.trim().to_string()).collect()),
    })
}

fn resolve(args: &RunArgs) -> Result<config::ResolvedConfig, commands::Failure> {
    let run_config = RunConfig::load(&args.config).map_err(commands::Failure::validation)?;
    let overrides = overrides_of(args).map_err(commands::Failure::validation)?;
    run_config
        .resolve(&overrides)
        .map_err(commands::Failure::validation)
}

fn run(cli: Cli) -> commands::CmdResult {
    match cli.command {
        Command::Prepare(args) => cmd_prepare(&resolve(&args)?),
        Command::Train(args) => cmd_train(&resolve(&args)?),
        Command::Predict {
            run,
            checkpoints,
            input,
        } => cmd_predict(&resolve(&run)?, &checkpoints, &input),
        Command::Evaluate {
            truth,
            predictions,
            out,
        } => cmd_evaluate(&truth, &predictions, &out),
        Command::Ablate { run, seeds } => {
            let resolved = resolve(&run)?;
            let seeds = match seeds {
                Some(list) => parse_seed_list(&list).map_err(commands::Failure::validation)?,
                None => vec![resolved.seed],
            };
            cmd_ablate(&resolved, &seeds)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            // --help/--version exit 0; usage mistakes are validation errors.
            if err.use_stderr() {
                let _ = err.print();
                return ExitCode::from(1);
            }
            let _ = err.print();
            return ExitCode::SUCCESS;
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            eprintln!("error: {:#}", failure.error);
            ExitCode::from(failure.code as u8)
        }
    }
}
