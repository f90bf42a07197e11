//! `dhan`: data preparation, synthetic corpora, training, evaluation,
//! model comparison and attention export.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand};

use dhan_core::{SampleMode, Variant};

use config::RunConfig;

#[derive(Parser, Debug)]
#[command(
    name = "dhan",
    version,
    about = "Hierarchical attention CTR models",
    propagate_version = true
)]
struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Override a config entry, e.g. `--set train.epochs=3`. Repeatable.
    #[arg(long = "set", global = true, value_name = "SECTION.KEY=VALUE")]
    overrides: Vec<String>,

    /// Output directory; overrides `output.dir`.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic review corpus with planted category preferences.
    Synth {
        #[arg(long)]
        seed: u64,
    },
    /// Build vocabularies and labeled samples, split by user.
    Prepare {
        #[arg(long)]
        seed: u64,
        /// Sample generation protocol; overrides `dataset.mode`.
        #[arg(long, value_enum)]
        mode: Option<Mode>,
    },
    /// Train `model.variant` and save its snapshot, manifest and curve.
    Train {
        #[arg(long)]
        seed: u64,
    },
    /// Score the test split with a trained snapshot.
    Eval,
    /// Train several variants with repeated runs and tabulate AUC.
    Compare {
        #[arg(long)]
        seed: u64,
        /// Variant the relative improvement is measured against.
        #[arg(long, default_value = "din")]
        baseline: Variant,
        #[arg(long, value_delimiter = ',', default_values_t = Variant::ALL.to_vec())]
        variants: Vec<Variant>,
        #[arg(long, default_value_t = 5)]
        runs: usize,
    },
    /// Export per-level attention weights for test samples.
    Attention {
        /// Export at most this many samples.
        #[arg(long)]
        limit: Option<usize>,
        /// Only clicked samples.
        #[arg(long)]
        positives: bool,
    },
}

#[derive(clap::ValueEnum, Clone, Copy, Debug)]
enum Mode {
    Din,
    Dien,
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = RunConfig::load(cli.config.as_deref(), &cli.overrides)?;
    if let Some(out) = cli.out {
        cfg.output.dir = out;
    }
    match cli.command {
        Command::Synth { seed } => commands::synth(&cfg, seed),
        Command::Prepare { seed, mode } => {
            if let Some(m) = mode {
                cfg.dataset.mode = match m {
                    Mode::Din => SampleMode::Din,
                    Mode::Dien => SampleMode::Dien,
                };
            }
            let s = commands::prepare_cmd(&cfg, seed)?;
            eprintln!(
                "{} users, {} goods, {} categories, {} samples",
                s.users, s.goods, s.categories, s.samples
            );
            Ok(())
        }
        Command::Train { seed } => commands::train_cmd(&cfg, seed),
        Command::Eval => {
            let m = commands::eval_cmd(&cfg)?;
            eprintln!("{}: auc {:.6}, loss {:.6}", m.model, m.final_auc, m.final_loss);
            Ok(())
        }
        Command::Compare {
            seed,
            baseline,
            variants,
            runs,
        } => commands::compare_cmd(&cfg, seed, &variants, runs, baseline),
        Command::Attention { limit, positives } => {
            let n = commands::attention_cmd(&cfg, limit, positives)?;
            eprintln!("exported {n} samples");
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
