//! `fino`: one binary for the offline experiment loop.

// `!(x > 0.0)` is the NaN-rejecting form of a positivity check, and the
// numeric kernels index several buffers in lockstep.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};

#[derive(Parser)]
#[command(name = "fino", version, about = "Multimodal manipulation failure detector: data, training, evaluation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    flags: Flags,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Write a seeded synthetic dataset to --data.
    Datagen,
    /// Ingest every episode, report survivors and cache eval-mode samples under --out.
    Preprocess,
    /// Train with early stopping; writes the best checkpoint, epoch log and report to --out.
    Train,
    /// Score a checkpoint on the test split (or every episode with eval.split = all).
    Eval,
    /// Inference from the first --fraction of each episode; --sweep scores fractions 0.1..1.0.
    Infer,
    /// Finite-difference checks of every layer type and the desk-sized model.
    Gradcheck,
    /// Time eval-mode forward passes per variant.
    Bench,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Datagen => "datagen",
            Command::Preprocess => "preprocess",
            Command::Train => "train",
            Command::Eval => "eval",
            Command::Infer => "infer",
            Command::Gradcheck => "gradcheck",
            Command::Bench => "bench",
        }
    }
}

/// Dedicated flags; each is shorthand for one config key and wins over
/// the file and `--set`.
#[derive(Args)]
struct Flags {
    /// `key = value` configuration file.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Override any config key; repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Seeds data generation, initialization, splitting and sampling.
    #[arg(long, global = true)]
    seed: Option<String>,
    /// rgb|d|a|rgbd|rgbda
    #[arg(long, global = true)]
    variant: Option<String>,
    /// Dataset root (written by datagen, read by everything else).
    #[arg(long, global = true, value_name = "DIR")]
    data: Option<String>,
    /// Directory for logs, reports and the default checkpoint.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<String>,
    /// Checkpoint to write (train) or read; defaults to <out>/model.ckpt.
    #[arg(long, global = true, value_name = "PATH")]
    checkpoint: Option<String>,
    /// Observed fraction of each episode for infer, in (0, 1].
    #[arg(long, global = true, value_name = "F")]
    fraction: Option<String>,
    /// Score fractions 0.1, 0.2, ..., 1.0 instead of one.
    #[arg(long, global = true)]
    sweep: bool,
    /// Restrict infer / eval / bench to one episode.
    #[arg(long, global = true, value_name = "ID")]
    episode: Option<String>,
    /// Maximum training epochs.
    #[arg(long, global = true, value_name = "N")]
    epochs: Option<String>,
    /// Adam learning rate.
    #[arg(long, global = true, value_name = "F")]
    lr: Option<String>,
}

fn effective_config(flags: &Flags) -> CliResult<RunConfig> {
    let mut cfg = RunConfig::default();
    if let Some(path) = &flags.config {
        cfg.apply_file(path)?;
    }
    let mut pairs = Vec::new();
    for s in &flags.set {
        let (k, v) = s
            .split_once('=')
            .ok_or_else(|| CliError::usage(format!("--set expects KEY=VALUE, got {s:?}")))?;
        pairs.push((k.trim(), v.trim()));
    }
    let named = [
        ("seed", &flags.seed),
        ("model.variant", &flags.variant),
        ("data", &flags.data),
        ("out", &flags.out),
        ("checkpoint", &flags.checkpoint),
        ("infer.fraction", &flags.fraction),
        ("infer.episode", &flags.episode),
        ("train.max_epochs", &flags.epochs),
        ("train.learning_rate", &flags.lr),
    ];
    pairs.extend(named.iter().filter_map(|(k, v)| v.as_deref().map(|v| (*k, v))));
    if flags.sweep {
        pairs.push(("infer.sweep", "true"));
    }
    cfg.apply(pairs)?;
    cfg.finalize()?;
    Ok(cfg)
}

fn run(cli: Cli) -> CliResult<()> {
    let cfg = effective_config(&cli.flags)?;
    println!("# fino {} effective config", cli.command.name());
    print!("{}", cfg.render());
    println!("# end config");
    match cli.command {
        Command::Datagen => commands::datagen(&cfg),
        Command::Preprocess => commands::preprocess(&cfg),
        Command::Train => commands::train(&cfg),
        Command::Eval => commands::eval(&cfg),
        Command::Infer => commands::infer(&cfg),
        Command::Gradcheck => commands::gradcheck(&cfg),
        Command::Bench => commands::bench(&cfg),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.to_string().replace('\n', " "));
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
