//! `uapforge`: one binary for the whole pipeline. Subcommands consume each
//! other's files through a shared run directory; every run first echoes its
//! fully resolved configuration, and that echo is itself a valid config.

mod commands;
mod config;
mod selftest;

use std::fs;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use commands::{CliError, EvaluateArgs};
use config::{parse_lengths, RunConfig};
use uapforge_core::uaptrain::LossVariant;

#[derive(Parser)]
#[command(
    name = "uapforge",
    version,
    about = "Train and evaluate short tiled adversarial audio patches against a speaker-identification model"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonArgs {
    /// Sectioned key-value config file; defaults apply for absent keys.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed; per-stage seeds derive from it.
    #[arg(long)]
    seed: Option<u64>,
    /// Run directory holding corpus, checkpoints, and reports.
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Args)]
struct TrainUapArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Patch regularizer: exp_tv or l2.
    #[arg(long)]
    loss: Option<String>,
    /// Override the attack epoch count.
    #[arg(long)]
    epochs: Option<usize>,
}

#[derive(Args)]
struct EvaluateCliArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Patch file to evaluate; defaults to the configured variant's artifact.
    #[arg(long)]
    patch: Option<PathBuf>,
    /// Second patch; additionally emits a side-by-side comparison.
    #[arg(long)]
    compare_patch: Option<PathBuf>,
    /// Comma-separated sweep lengths in seconds, e.g. 3,20.
    #[arg(long)]
    sweep: Option<String>,
    /// Report attack metrics even when the accuracy gate fails.
    #[arg(long)]
    skip_gate: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic corpus and preprocess it (normalize + pad).
    GenData(CommonArgs),
    /// Train the speaker-identification model on the corpus.
    TrainModel(CommonArgs),
    /// Train the universal patch against the trained model.
    TrainUap(TrainUapArgs),
    /// Measure fooling rate, SNR, length sweep, and similarity histograms.
    Evaluate(EvaluateCliArgs),
    /// Run the fast numeric invariant suite.
    Selftest(CommonArgs),
}

/// Loads the config file (or defaults) with `extra_lines` appended as if they
/// were the file's last lines, so flag overrides behave exactly like config
/// keys (including variant-dependent defaults).
fn load_config(common: &CommonArgs, extra_lines: &[String]) -> Result<RunConfig, CliError> {
    let mut text = match &common.config {
        Some(path) => fs::read_to_string(path).map_err(|e| {
            CliError::config(format!("cannot read config {}: {e}", path.display()))
        })?,
        None => String::new(),
    };
    for line in extra_lines {
        text.push('\n');
        text.push_str(line);
    }
    let mut cfg = RunConfig::parse(&text).map_err(|e| CliError::config(e.to_string()))?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
        cfg.reseed();
    }
    if let Some(dir) = &common.out_dir {
        cfg.out_dir = dir.clone();
    }
    Ok(cfg)
}

/// First output block of every run: the resolved config, re-consumable as-is.
fn echo(cfg: &RunConfig) {
    println!("# resolved config");
    print!("{}", cfg.to_text());
    println!();
}

fn run() -> Result<(), CliError> {
    match Cli::parse().command {
        Command::GenData(common) => {
            let cfg = load_config(&common, &[])?;
            echo(&cfg);
            commands::gen_data(&cfg)
        }
        Command::TrainModel(common) => {
            let cfg = load_config(&common, &[])?;
            echo(&cfg);
            commands::cmd_train_model(&cfg)
        }
        Command::TrainUap(args) => {
            let mut extra = Vec::new();
            if let Some(loss) = &args.loss {
                LossVariant::parse(loss)
                    .ok_or_else(|| CliError::config(format!("bad --loss {loss:?} (want exp_tv|l2)")))?;
                extra.push("[attack]".to_string());
                extra.push(format!("loss = {loss}"));
            }
            if let Some(epochs) = args.epochs {
                if extra.is_empty() {
                    extra.push("[attack]".to_string());
                }
                extra.push(format!("epochs = {epochs}"));
            }
            let cfg = load_config(&args.common, &extra)?;
            echo(&cfg);
            commands::cmd_train_uap(&cfg)
        }
        Command::Evaluate(args) => {
            let mut cfg = load_config(&args.common, &[])?;
            if let Some(sweep) = &args.sweep {
                cfg.eval.sweep.lengths_s = parse_lengths(sweep).map_err(CliError::config)?;
                cfg.eval
                    .sweep
                    .validate()
                    .map_err(|e| CliError::config(e.to_string()))?;
            }
            if args.skip_gate {
                cfg.eval.skip_gate = true;
            }
            echo(&cfg);
            commands::cmd_evaluate(
                &cfg,
                &EvaluateArgs {
                    patch: args.patch.clone(),
                    compare_patch: args.compare_patch.clone(),
                },
            )
        }
        Command::Selftest(common) => {
            let cfg = load_config(&common, &[])?;
            echo(&cfg);
            commands::cmd_selftest()
        }
    }
}

fn main() {
    if let Err(e) = run() {
        eprintln!("error: {}", e.message);
        std::process::exit(e.code);
    }
}
